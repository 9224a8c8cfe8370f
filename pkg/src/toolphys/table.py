"""Tabular property samples with a level hierarchy."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np


class Level(str, Enum):
    ACTION = "Action"
    SIMULATION = "Simulation"
    EFFECT = "Effect"

    @property
    def rank(self) -> int:
        return _RANK[self]

    def below(self) -> "Level | None":
        return {Level.EFFECT: Level.SIMULATION, Level.SIMULATION: Level.ACTION}.get(self)


_RANK = {Level.ACTION: 0, Level.SIMULATION: 1, Level.EFFECT: 2}


@dataclass(frozen=True)
class Column:
    name: str
    level: Level
    values: np.ndarray
    parent: str | None = None
    unit: str = ""


@dataclass
class VariableTable:
    """Ordered columns of equal length.

    Parent links form a forest, and a child never sits above its parent in
    the Action < Simulation < Effect ordering.
    """

    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_columns(cls, columns: Iterable[Column]) -> "VariableTable":
        cols = {}
        for c in columns:
            if c.name in cols:
                raise ValueError(f"duplicate column {c.name!r}")
            cols[c.name] = Column(c.name, Level(c.level), np.asarray(c.values, dtype=float),
                                  c.parent, c.unit)
        return cls(cols)

    @classmethod
    def from_arrays(cls, data: Mapping[str, np.ndarray], levels: Mapping[str, str],
                    parents: Mapping[str, str] | None = None, units=None) -> "VariableTable":
        parents = parents or {}
        units = units or {}
        return cls.from_columns(
            Column(k, Level(levels[k]), np.asarray(v, dtype=float), parents.get(k), units.get(k, ""))
            for k, v in data.items()
        )

    def validate(self):
        lengths = {len(c.values) for c in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"columns have unequal lengths {sorted(lengths)}")
        if self.columns and lengths.pop() < 1:
            raise ValueError("columns must hold at least one sample")
        for c in self.columns.values():
            if c.parent is None:
                continue
            if c.parent not in self.columns:
                raise ValueError(f"column {c.name!r} has unknown parent {c.parent!r}")
            if c.level.rank > self.columns[c.parent].level.rank:
                raise ValueError(f"column {c.name!r} sits above its parent {c.parent!r}")
        for name in self.columns:
            seen, cur = set(), name
            while cur is not None:
                if cur in seen:
                    raise ValueError(f"parent cycle through {name!r}")
                seen.add(cur)
                cur = self.columns[cur].parent

    @property
    def names(self) -> list:
        return list(self.columns)

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.columns.values())).values) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name].values

    def __contains__(self, name) -> bool:
        return name in self.columns

    def level(self, name: str) -> Level:
        return self.columns[name].level

    def children(self, name: str) -> list:
        return [c.name for c in self.columns.values() if c.parent == name]

    def roots(self, exclude=(), levels=None) -> list:
        levels = None if levels is None else {Level(l) for l in levels}
        return [
            c.name for c in self.columns.values()
            if c.parent is None and c.name not in exclude and (levels is None or c.level in levels)
        ]

    def depth(self, name: str) -> int:
        """Height of the subtree rooted at ``name`` (1 for a leaf)."""
        kids = self.children(name)
        return 1 + max((self.depth(k) for k in kids), default=0)

    def arrays(self, names=None) -> dict:
        names = self.names if names is None else names
        return {n: self.columns[n].values for n in names}

    def levels(self) -> dict:
        return {n: c.level for n, c in self.columns.items()}
