"""Tool descriptors, basis-pair sampling and the robot+tool virtual chain."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .dynamics import KinematicChain, Link, forward_kinematics
from .errors import IncompatibleRoles, NoValidPair

AFFORDANCE = "affordance"
FUNCTIONAL = "functional"
ROLES = (AFFORDANCE, FUNCTIONAL)
NORMAL_TOL = 1e-9


def frame_from_normal(z, hint=(0.0, 1.0, 0.0)):
    """Right-handed frame whose z axis is ``z``; y follows ``hint`` where possible."""
    z = np.asarray(z, dtype=float)
    z = z / np.linalg.norm(z)
    hint = np.asarray(hint, dtype=float)
    if abs(hint @ z) > 0.99:
        hint = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    y = hint - (hint @ z) * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    return np.column_stack([x, y, z])


@dataclass(frozen=True)
class Basis:
    """Candidate tool region: center, outward normal and role mask, all in the tool root frame.

    ``width`` and ``depth`` describe the rectangular 2-D contact profile the
    effect simulator sweeps: ``width`` across the contact face, ``depth``
    behind it along the inward normal.
    """

    label: str
    position: np.ndarray
    normal: np.ndarray
    roles: frozenset
    width: float = 0.02
    depth: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > NORMAL_TOL:
            raise ValueError(f"basis {self.label!r}: normal must be unit length")
        object.__setattr__(self, "normal", n)
        roles = frozenset(self.roles)
        if not roles or not roles <= set(ROLES):
            raise ValueError(f"basis {self.label!r}: roles must be a non-empty subset of {ROLES}")
        object.__setattr__(self, "roles", roles)
        if self.width <= 0 or self.depth <= 0:
            raise ValueError(f"basis {self.label!r}: profile width and depth must be positive")

    @property
    def frame(self) -> np.ndarray:
        """Frame orientation in the tool root: z along the outward normal."""
        return frame_from_normal(self.normal)


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    bases: tuple
    joints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "bases", tuple(self.bases))
        object.__setattr__(self, "joints", tuple(self.joints))
        if self.mass < 0:
            raise ValueError(f"tool {self.name!r}: negative mass")
        if not np.allclose(inertia, inertia.T, atol=1e-12) or np.min(np.linalg.eigvalsh(inertia)) < -1e-12:
            raise ValueError(f"tool {self.name!r}: inertia must be symmetric positive semidefinite")
        labels = [b.label for b in self.bases]
        if len(set(labels)) != len(labels):
            raise ValueError(f"tool {self.name!r}: duplicate basis labels")
        for j in self.joints:
            if j.actuated and j.moving:
                raise ValueError(f"tool {self.name!r}: internal joint {j.name!r} must be unactuated")

    def validate(self):
        """Role coverage required of loaded descriptors."""
        if not any(AFFORDANCE in b.roles for b in self.bases):
            raise ValueError(f"tool {self.name!r}: no affordance-capable basis")
        if not any(FUNCTIONAL in b.roles for b in self.bases):
            raise ValueError(f"tool {self.name!r}: no functional-capable basis")
        return self

    def basis(self, label: str) -> Basis:
        for b in self.bases:
            if b.label == label:
                return b
        raise KeyError(f"tool {self.name!r} has no basis {label!r}")

    @property
    def labels(self) -> list:
        return [b.label for b in self.bases]


def valid_pairs(tool: ToolDescriptor) -> list:
    """All ordered (affordance, functional) label pairs, in label order."""
    return sorted((a.label, f.label) for a, f in permutations(tool.bases, 2)
                  if AFFORDANCE in a.roles and FUNCTIONAL in f.roles)


def sample_bases(tool: ToolDescriptor, seed) -> tuple:
    pairs = valid_pairs(tool)
    if not pairs:
        raise NoValidPair(f"tool {tool.name!r} has no distinct affordance/functional pair")
    rng = np.random.default_rng(seed)
    return pairs[int(rng.integers(len(pairs)))]


@dataclass(frozen=True)
class VirtualJoint:
    """Joint between gripper and tool: ``fixed`` (rigid grasp) or an unactuated ``hinge``."""

    kind: str = "fixed"
    axis: tuple = (1.0, 0.0, 0.0)
    limit: float = np.pi

    def __post_init__(self):
        if self.kind not in ("fixed", "hinge"):
            raise ValueError(f"unknown virtual joint kind {self.kind!r}")

    @property
    def dof(self) -> int:
        return 0 if self.kind == "fixed" else 1


@dataclass(frozen=True)
class VKC:
    chain: KinematicChain
    robot_dof: int
    virtual_dof: int
    tool_dof: int
    tool_link: int
    tool: ToolDescriptor
    affordance: str
    functional: str
    virtual: VirtualJoint = field(default_factory=VirtualJoint)

    @property
    def dof(self) -> int:
        return self.chain.dof

    @property
    def state_dim(self) -> int:
        return 2 * self.dof

    @property
    def functional_basis(self) -> Basis:
        return self.tool.basis(self.functional)

    @property
    def robot_joints(self) -> np.ndarray:
        return np.arange(self.robot_dof)


def grasp_transform(tool: ToolDescriptor, affordance: str):
    """Pose (R, p) of the tool root in the gripper frame.

    The affordance basis center sits at the gripper origin and the gripper
    z axis points against the basis normal.
    """
    b = tool.basis(affordance)
    r_root_grip = frame_from_normal(-b.normal)
    rot = r_root_grip.T
    return rot, -rot @ b.position


def construct_vkc(robot: KinematicChain, tool: ToolDescriptor, affordance: str, functional: str,
                  virtual_joint: VirtualJoint | None = None) -> VKC:
    vj = virtual_joint or VirtualJoint()
    if robot.tip_link != len(robot.links) - 1:
        raise ValueError("robot tip frame must hang off its last link")
    a, f = tool.basis(affordance), tool.basis(functional)
    if AFFORDANCE not in a.roles:
        raise IncompatibleRoles(f"basis {affordance!r} is not affordance-capable")
    if FUNCTIONAL not in f.roles:
        raise IncompatibleRoles(f"basis {functional!r} is not functional-capable")
    if affordance == functional:
        raise IncompatibleRoles("affordance and functional bases must differ")
    virtual = Link("virtual", "fixed" if vj.kind == "fixed" else "revolute", vj.axis,
                   rotation=robot.tip_rotation, translation=robot.tip_translation,
                   lower=-vj.limit, upper=vj.limit, actuated=False)
    grasp_rot, grasp_pos = grasp_transform(tool, affordance)
    root = Link("tool_root", "fixed", rotation=grasp_rot, translation=grasp_pos, mass=tool.mass,
                com=tool.com, inertia=tool.inertia)
    links = list(robot.links) + [virtual, root] + list(tool.joints)
    tool_link = len(robot.links) + 1
    chain = KinematicChain(tuple(links), gravity=robot.gravity, tip_rotation=f.frame,
                           tip_translation=f.position, base_rotation=robot.base_rotation,
                           base_translation=robot.base_translation,
                           name=f"{robot.name}+{tool.name}", tip_link=tool_link)
    tool_dof = sum(1 for j in tool.joints if j.moving)
    return VKC(chain, robot.dof, vj.dof, tool_dof, tool_link, tool, affordance, functional, vj)


def tool_root_pose(vkc: VKC, q, check=True):
    poses, _ = forward_kinematics(vkc.chain, q, check)
    return poses[vkc.tool_link]


def functional_normal(vkc: VKC, q, check=True):
    """World-frame outward normal of the functional basis."""
    rot, _ = tool_root_pose(vkc, q, check)
    n = rot @ vkc.functional_basis.normal
    return n / (n @ n) ** 0.5
