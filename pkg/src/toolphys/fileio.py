"""Structured-text loaders with line-precise validation errors.

Every loader reads YAML twice: ``safe_load`` for values and ``compose`` for
source positions, so a schema error can name the file, line and field.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .dynamics import KinematicChain, Link, rpy_matrix
from .errors import ValidationError
from .table import Column, Level, VariableTable
from .vkc import Basis, ToolDescriptor

DATA_DIR = Path(__file__).parent / "data"


class Doc:
    """Parsed YAML document that remembers where each value came from."""

    def __init__(self, text: str, path: str = "<string>"):
        self.path = str(path)
        try:
            self.data = yaml.safe_load(text)
            root = yaml.compose(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ValidationError(f"malformed YAML: {getattr(e, 'problem', e)}", self.path,
                                  mark.line + 1 if mark else 0, "") from None
        self.lines = {}
        if root is not None:
            self._index(root, ())

    @classmethod
    def load(cls, path) -> "Doc":
        path = Path(path)
        if not path.exists():
            raise ValidationError("file not found", str(path), 0, "")
        return cls(path.read_text(), str(path))

    def _index(self, node, key):
        self.lines[key] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self.lines[key + (k.value,)] = k.start_mark.line + 1
                self._index(v, key + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._index(v, key + (i,))

    def line(self, key) -> int:
        key = tuple(key)
        while key and key not in self.lines:
            key = key[:-1]
        return self.lines.get(key, 1)

    def error(self, key, message):
        return ValidationError(message, self.path, self.line(key), field_name(key))


def field_name(key) -> str:
    out = ""
    for k in key:
        out += f"[{k}]" if isinstance(k, int) else (f".{k}" if out else str(k))
    return out


class Reader:
    """Typed accessors over a mapping inside a :class:`Doc`."""

    def __init__(self, doc: Doc, key=(), value=None):
        self.doc, self.key = doc, tuple(key)
        self.value = doc.data if value is None and not key else value
        if not isinstance(self.value, dict):
            raise doc.error(self.key, "expected a mapping")

    def has(self, name) -> bool:
        return name in self.value

    def _get(self, name, default, required):
        if name not in self.value:
            if required:
                raise self.doc.error(self.key, f"missing required field {field_name(self.key + (name,))!r}")
            return default
        return self.value[name]

    def sub(self, name, required=True):
        v = self._get(name, None, required)
        return None if v is None else Reader(self.doc, self.key + (name,), v)

    def items(self, name, required=True) -> list:
        v = self._get(name, [], required)
        if not isinstance(v, list):
            raise self.doc.error(self.key + (name,), "expected a list")
        return [(self.key + (name, i), x) for i, x in enumerate(v)]

    def readers(self, name, required=True) -> list:
        return [Reader(self.doc, k, v) for k, v in self.items(name, required)]

    def str(self, name, default=None, required=True, choices=None) -> str:
        v = self._get(name, default, required and default is None)
        if v is None:
            return v
        if not isinstance(v, str):
            raise self.doc.error(self.key + (name,), "expected a string")
        if choices and v not in choices:
            raise self.doc.error(self.key + (name,), f"must be one of {list(choices)}")
        return v

    def float(self, name, default=None, lo=None, hi=None, strict_lo=False) -> float:
        v = self._get(name, default, default is None)
        k = self.key + (name,)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            # YAML 1.1 reads exponents without a sign (2.0e4) as strings
            try:
                v = float(v.strip().replace(".inf", "inf")) if isinstance(v, str) else None
            except ValueError:
                v = None
            if v is None:
                raise self.doc.error(k, "expected a number")
        v = float(v)
        if np.isnan(v):
            raise self.doc.error(k, "must not be NaN")
        if lo is not None and (v < lo or (strict_lo and v == lo)):
            raise self.doc.error(k, f"must be {'>' if strict_lo else '>='} {lo}")
        if hi is not None and v > hi:
            raise self.doc.error(k, f"must be <= {hi}")
        return v

    def int(self, name, default=None, lo=None) -> int:
        v = self._get(name, default, default is None)
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.doc.error(self.key + (name,), "expected an integer")
        if lo is not None and v < lo:
            raise self.doc.error(self.key + (name,), f"must be >= {lo}")
        return v

    def bool(self, name, default=None) -> bool:
        v = self._get(name, default, default is None)
        if not isinstance(v, bool):
            raise self.doc.error(self.key + (name,), "expected true or false")
        return v

    def vector(self, name, n, default=None) -> np.ndarray:
        v = self._get(name, default, default is None)
        k = self.key + (name,)
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise self.doc.error(k, f"expected a list of {n} numbers") from None
        if arr.shape != (n,) or not np.all(np.isfinite(arr)):
            raise self.doc.error(k, f"expected a list of {n} finite numbers")
        return arr

    def matrix3(self, name, default=None) -> np.ndarray:
        """3x3 matrix, or a 3-list read as its diagonal."""
        v = self._get(name, default, default is None)
        k = self.key + (name,)
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise self.doc.error(k, "expected a 3x3 matrix or a 3-list diagonal") from None
        if arr.shape == (3,):
            arr = np.diag(arr)
        if arr.shape != (3, 3) or not np.all(np.isfinite(arr)):
            raise self.doc.error(k, "expected a 3x3 matrix or a 3-list diagonal")
        return arr

    def pose(self, name):
        if name not in self.value:
            return np.eye(3), np.zeros(3)
        r = self.sub(name)
        return rpy_matrix(r.vector("rpy", 3, [0, 0, 0])), r.vector("xyz", 3, [0, 0, 0])

    def error(self, name, message):
        return self.doc.error(self.key + ((name,) if name is not None else ()), message)


# -- chains and tools -----------------------------------------------------------------------

def _link(r: Reader) -> Link:
    joint = r.str("joint", "revolute", choices=("revolute", "prismatic", "fixed"))
    rot, pos = r.pose("origin")
    inertia = r.matrix3("inertia", [0, 0, 0])
    if not np.allclose(inertia, inertia.T, atol=1e-12):
        raise r.error("inertia", "must be symmetric")
    if np.min(np.linalg.eigvalsh(inertia)) < -1e-12:
        raise r.error("inertia", "must be positive semidefinite")
    lim = r.sub("limits", required=False)
    lower = lim.float("lower", -np.inf) if lim else -np.inf
    upper = lim.float("upper", np.inf) if lim else np.inf
    if lower > upper:
        raise lim.error("lower", "must not exceed upper")
    axis = r.vector("axis", 3, [0, 0, 1])
    if joint != "fixed" and np.linalg.norm(axis) == 0:
        raise r.error("axis", "must be non-zero")
    return Link(
        r.str("name"), joint, axis, rotation=rot, translation=pos,
        mass=r.float("mass", 0.0, lo=0.0), com=r.vector("com", 3, [0, 0, 0]), inertia=inertia,
        lower=lower, upper=upper,
        velocity_limit=lim.float("velocity", np.inf, lo=0.0, strict_lo=True) if lim else np.inf,
        effort_limit=lim.float("effort", np.inf, lo=0.0) if lim else np.inf,
        actuated=r.bool("actuated", True))


def chain_from_doc(doc: Doc) -> KinematicChain:
    r = Reader(doc)
    links = [_link(x) for x in r.readers("links")]
    if not any(l.moving for l in links):
        raise r.error("links", "chain needs at least one moving joint")
    base_rot, base_pos = r.pose("base")
    tip_rot, tip_pos = r.pose("tip")
    return KinematicChain(tuple(links), gravity=r.vector("gravity", 3, [0, 0, -9.81]),
                          tip_rotation=tip_rot, tip_translation=tip_pos, base_rotation=base_rot,
                          base_translation=base_pos, name=r.str("name", "chain"))


def tool_from_doc(doc: Doc) -> ToolDescriptor:
    r = Reader(doc)
    bases = []
    for b in r.readers("bases"):
        n = b.vector("normal", 3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise b.error("normal", "must be unit length")
        roles = b.value.get("roles")
        if not isinstance(roles, list) or not roles or not set(roles) <= {"affordance", "functional"}:
            raise b.error("roles", "must be a non-empty list drawn from [affordance, functional]")
        bases.append(Basis(b.str("label"), b.vector("position", 3), n, frozenset(roles),
                           b.float("width", 0.02, lo=0.0, strict_lo=True),
                           b.float("depth", 0.02, lo=0.0, strict_lo=True)))
    if not bases:
        raise r.error("bases", "tool needs at least one basis")
    if len({b.label for b in bases}) != len(bases):
        raise r.error("bases", "duplicate basis labels")
    joints = []
    for j in r.readers("joints", required=False):
        link = _link(j)
        if link.moving and link.actuated:
            raise j.error("actuated", "tool joints must be unactuated")
        joints.append(link)
    inertia = r.matrix3("inertia", [0, 0, 0])
    try:
        return ToolDescriptor(r.str("name"), r.float("mass", lo=0.0), r.vector("com", 3, [0, 0, 0]),
                              inertia, tuple(bases), tuple(joints)).validate()
    except ValueError as e:
        raise r.error(None, str(e)) from None


def _resolve(path, kind):
    p = Path(path)
    if p.exists() or p.suffix:
        return p
    return DATA_DIR / kind / f"{path}.yaml"


def load_chain(path) -> KinematicChain:
    """Load a chain file; a bare name picks a shipped chain (``planar3``, ``arm6``, ``human7``)."""
    return chain_from_doc(Doc.load(_resolve(path, "chains")))


def load_tool(path) -> ToolDescriptor:
    return tool_from_doc(Doc.load(_resolve(path, "tools")))


def shipped(kind: str) -> list:
    return sorted(p.stem for p in (DATA_DIR / kind).glob("*.yaml"))


# -- numeric text formats -----------------------------------------------------------------------

def fmt(x) -> str:
    """Full-precision decimal text; repr round-trips float64 exactly."""
    return repr(float(x))


def to_jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj, path=None) -> str:
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError("file not found", str(path), 0, "")
    try:
        return json.loads(path.read_text(), parse_constant=float)
    except json.JSONDecodeError as e:
        raise ValidationError(f"malformed JSON: {e.msg}", str(path), e.lineno, "") from None


def write_table(table: VariableTable, path=None) -> str:
    """Delimited text with a ``#`` header block of (symbol, level, parent, unit)."""
    buf = io.StringIO()
    names = table.names
    buf.write("# symbol,level,parent,unit\n")
    for n in names:
        c = table.columns[n]
        buf.write(f"# {n},{c.level.value},{c.parent or ''},{c.unit}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*(table[n] for n in names)):
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_table(path=None, text=None) -> VariableTable:
    src = str(path) if path is not None else "<string>"
    if text is None:
        if not Path(path).exists():
            raise ValidationError("file not found", src, 0, "")
        text = Path(path).read_text()
    lines = text.splitlines()
    meta, i = {}, 0
    if not lines or not lines[0].startswith("# symbol"):
        raise ValidationError("missing typed header '# symbol,level,parent,unit'", src, 1, "header")
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        parts = lines[i][1:].strip().split(",")
        if len(parts) != 4:
            raise ValidationError("header rows need symbol,level,parent,unit", src, i + 1, "header")
        sym, level, parent, unit = parts
        try:
            Level(level)
        except ValueError:
            raise ValidationError(f"unknown level {level!r}", src, i + 1, f"{sym}.level") from None
        meta[sym] = (level, parent or None, unit)
        i += 1
    if i >= len(lines):
        raise ValidationError("missing column-name row", src, i + 1, "columns")
    names = next(csv.reader([lines[i]]))
    if set(names) != set(meta):
        raise ValidationError("column names do not match header symbols", src, i + 1, "columns")
    rows = []
    for j, line in enumerate(lines[i + 1:], start=i + 2):
        if not line.strip():
            continue
        vals = next(csv.reader([line]))
        if len(vals) != len(names):
            raise ValidationError(f"expected {len(names)} values", src, j, "row")
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise ValidationError("non-numeric value", src, j, "row") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(names))
    try:
        return VariableTable.from_columns(
            Column(n, Level(meta[n][0]), data[:, k], meta[n][1], meta[n][2]) for k, n in enumerate(names))
    except ValueError as e:
        raise ValidationError(str(e), src, 1, "header") from None


def write_curves(columns: dict, path=None) -> str:
    """Plot data as delimited text, one named column per curve."""
    names = list(columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    n = max((len(columns[k]) for k in names), default=0)
    for i in range(n):
        w.writerow([fmt(columns[k][i]) if i < len(columns[k]) else "" for k in names])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
