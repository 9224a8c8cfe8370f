"""Serial-chain kinematics and rigid-body dynamics.

Spatial vectors follow Featherstone's convention: motion vectors are
``[angular; linear]`` expressed in link coordinates, and ``X`` maps
parent-frame motion vectors into the child frame. All routines are written
without in-place array updates so they run unchanged on numpy arrays and on
jax tracers (the optimal-control transcription differentiates through them).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import OutOfLimits, SingularInertia

JOINT_TYPES = ("revolute", "prismatic", "fixed")
LIMIT_TOL = 1e-9


def _ns(*arrays):
    for a in arrays:
        if type(a).__module__.startswith("jax"):
            from ._jax import jnp

            return jnp
    return np


@dataclass(frozen=True)
class Link:
    name: str
    joint: str = "revolute"
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = 0.0
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    lower: float = -np.inf
    upper: float = np.inf
    velocity_limit: float = np.inf
    effort_limit: float = np.inf
    actuated: bool = True

    def __post_init__(self):
        if self.joint not in JOINT_TYPES:
            raise ValueError(f"link {self.name!r}: unknown joint type {self.joint!r}")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if self.joint != "fixed":
            if norm == 0:
                raise ValueError(f"link {self.name!r}: zero joint axis")
            axis = axis / norm
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        object.__setattr__(self, "inertia", inertia)
        if self.mass < 0:
            raise ValueError(f"link {self.name!r}: negative mass")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ValueError(f"link {self.name!r}: inertia not symmetric")
        if np.min(np.linalg.eigvalsh(inertia)) < -1e-12:
            raise ValueError(f"link {self.name!r}: inertia not positive semidefinite")
        if self.lower > self.upper:
            raise ValueError(f"link {self.name!r}: lower limit above upper limit")

    @property
    def moving(self) -> bool:
        return self.joint != "fixed"

    def spatial_inertia(self) -> np.ndarray:
        m, c = self.mass, self.com
        cx = skew(c)
        out = np.zeros((6, 6))
        out[:3, :3] = self.inertia + m * cx @ cx.T
        out[:3, 3:] = m * cx
        out[3:, :3] = m * cx.T
        out[3:, 3:] = m * np.eye(3)
        return out

    def motion_subspace(self) -> np.ndarray:
        s = np.zeros(6)
        if self.joint == "revolute":
            s[:3] = self.axis
        elif self.joint == "prismatic":
            s[3:] = self.axis
        return s


@dataclass(frozen=True)
class KinematicChain:
    """Serial chain rooted at ``base``; the tip frame hangs off the last link."""

    links: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    tip_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    tip_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    base_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "chain"
    tip_link: int = -1

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        n = len(self.links)
        if not -n <= self.tip_link < n:
            raise ValueError(f"tip_link {self.tip_link} out of range")
        object.__setattr__(self, "tip_link", self.tip_link % n)
        for attr, shape in (("gravity", (3,)), ("tip_rotation", (3, 3)), ("tip_translation", (3,)),
                            ("base_rotation", (3, 3)), ("base_translation", (3,))):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=float).reshape(shape))
        if self.dof < 1:
            raise ValueError("chain needs at least one moving joint")
        # cached constants
        object.__setattr__(self, "_cache", _precompute(self))

    @property
    def dof(self) -> int:
        return sum(1 for l in self.links if l.moving)

    @property
    def joint_links(self) -> list:
        """Indices into ``links`` of the moving joints, in DoF order."""
        return [i for i, l in enumerate(self.links) if l.moving]

    @property
    def actuated(self) -> np.ndarray:
        return np.array([self.links[i].actuated for i in self.joint_links], dtype=bool)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.links[i].lower for i in self.joint_links])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.links[i].upper for i in self.joint_links])

    @property
    def velocity_limit(self) -> np.ndarray:
        return np.array([self.links[i].velocity_limit for i in self.joint_links])

    @property
    def effort_limit(self) -> np.ndarray:
        return np.array([self.links[i].effort_limit if self.links[i].actuated else 0.0
                         for i in self.joint_links])

    def with_links(self, links, tip_link=-1, **kw) -> "KinematicChain":
        return replace(self, links=tuple(links), tip_link=tip_link, **kw)

    def check_limits(self, q, tol=LIMIT_TOL):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise ValueError(f"expected {self.dof} joint values, got shape {q.shape}")
        bad = np.nonzero((q < self.lower - tol) | (q > self.upper + tol))[0]
        if len(bad):
            names = [self.links[self.joint_links[i]].name for i in bad]
            raise OutOfLimits(f"joints {names} outside limits")


def _precompute(chain):
    qi, k = [], 0
    for l in chain.links:
        qi.append(k if l.moving else None)
        k += l.moving
    return {"joints": tuple(l.joint for l in chain.links), "qidx": qi,
            "X_tree": [plucker(l.rotation, l.translation) for l in chain.links],
            "I": [l.spatial_inertia() for l in chain.links],
            "S": [l.motion_subspace() for l in chain.links],
            "axis": [l.axis for l in chain.links], "gravity": chain.gravity}


def dynamics_params(chain):
    """Chain constants as stacked arrays, for tracing one function per joint layout."""
    c = chain._cache
    return {"X_tree": np.stack(c["X_tree"]), "I": np.stack(c["I"]), "S": np.stack(c["S"]),
            "axis": np.stack(c["axis"]), "gravity": c["gravity"]}


def _model_from_params(joints, params):
    n = len(joints)
    qi, k = [], 0
    for j in joints:
        qi.append(k if j != "fixed" else None)
        k += j != "fixed"
    return {"joints": joints, "qidx": qi, "X_tree": [params["X_tree"][i] for i in range(n)],
            "I": [params["I"][i] for i in range(n)], "S": [params["S"][i] for i in range(n)],
            "axis": [params["axis"][i] for i in range(n)], "gravity": params["gravity"]}


# -- small spatial algebra ------------------------------------------------------------

def skew(v):
    xp = _ns(v)
    z = v[0] * 0.0
    return xp.array([[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]])


def rotation_about(axis, angle):
    """Rodrigues rotation about the unit vector ``axis``."""
    xp = _ns(axis, angle)
    k = skew(axis)
    return np.eye(3) + xp.sin(angle) * k + (1.0 - xp.cos(angle)) * (k @ k)


def plucker(rotation, translation):
    """Motion transform from parent to a child frame posed at (R, p) in the parent."""
    xp = _ns(rotation, translation)
    rt = rotation.T
    lower = -rt @ skew(translation)
    zero = xp.zeros((3, 3))
    return xp.concatenate([xp.concatenate([rt, zero], axis=1),
                           xp.concatenate([lower, rt], axis=1)], axis=0)


def crm(v):
    xp = _ns(v)
    w, u = skew(v[:3]), skew(v[3:])
    zero = xp.zeros((3, 3))
    return xp.concatenate([xp.concatenate([w, zero], axis=1), xp.concatenate([u, w], axis=1)], axis=0)


def crf(v):
    return -crm(v).T


def _joint_transform(joint, axis, qi):
    xp = _ns(axis, qi)
    if joint == "revolute":
        r = rotation_about(axis, qi)
        rt = r.T
        zero = xp.zeros((3, 3))
        return xp.concatenate([xp.concatenate([rt, zero], axis=1),
                               xp.concatenate([zero, rt], axis=1)], axis=0)
    if joint == "prismatic":
        return plucker(np.eye(3), axis * qi)
    return np.eye(6)


def _joint_pose(link, qi):
    if link.joint == "revolute":
        return rotation_about(link.axis, qi), np.zeros(3)
    if link.joint == "prismatic":
        return np.eye(3), link.axis * qi
    return np.eye(3), np.zeros(3)


def _link_transforms(model, q):
    out = []
    for joint, axis, xt, qi in zip(model["joints"], model["axis"], model["X_tree"], model["qidx"]):
        xj = _joint_transform(joint, axis, q[qi]) if qi is not None else np.eye(6)
        out.append(xj @ xt)
    return out


# -- kinematics -------------------------------------------------------------------------

def forward_kinematics(chain: KinematicChain, q, check=True):
    """World poses ``[(R, p), ...]`` of every link frame, plus the tip pose."""
    if check:
        chain.check_limits(q)
    rot, pos = chain.base_rotation, chain.base_translation
    poses = []
    for i, link in enumerate(chain.links):
        qi = chain._cache["qidx"][i]
        pos = pos + rot @ link.translation
        rot = rot @ link.rotation
        if qi is not None:
            rj, pj = _joint_pose(link, q[qi])
            pos = pos + rot @ pj
            rot = rot @ rj
        poses.append((rot, pos))
    rot, pos = poses[chain.tip_link]
    tip = (rot @ chain.tip_rotation, pos + rot @ chain.tip_translation)
    return poses, tip


def tip_pose(chain, q, check=True):
    return forward_kinematics(chain, q, check)[1]


def geometric_jacobian(chain: KinematicChain, q, frame="tip", check=True, point=None):
    """6 x DoF Jacobian (linear rows, then angular rows) in world coordinates.

    ``frame`` is ``"tip"`` or a link index; ``point`` overrides the
    reference point (world coordinates).
    """
    xp = _ns(q)
    poses, tip = forward_kinematics(chain, q, check)
    if frame == "tip":
        target, last = tip[1], chain.tip_link
    else:
        last = int(frame)
        target = poses[last][1]
    if point is not None:
        target = point
    cols = []
    for i in chain.joint_links:
        rot, pos = poses[i]
        axis = rot @ chain.links[i].axis
        if i > last:
            cols.append(xp.zeros(6))
        elif chain.links[i].joint == "revolute":
            cols.append(xp.concatenate([xp.cross(axis, target - pos), axis]))
        else:
            cols.append(xp.concatenate([axis, xp.zeros(3)]))
    return xp.stack(cols, axis=1)


# -- dynamics ----------------------------------------------------------------------------

def _a0(model, gravity):
    g = model["gravity"] if gravity is None else gravity
    if not hasattr(g, "shape"):
        g = np.asarray(g, dtype=float)
    xp = _ns(g)
    # base accelerates upward at -g so gravity needs no per-link term
    return xp.concatenate([xp.zeros(3), -g])


def inverse_dynamics(chain: KinematicChain, q, qd, qdd, gravity=None):
    """Recursive Newton-Euler: joint forces realizing ``qdd``."""
    return _rnea(chain._cache, chain.dof, q, qd, qdd, gravity)


def _rnea(cache, dof, q, qd, qdd, gravity=None):
    xp = _ns(q, qd, qdd)
    xs = _link_transforms(cache, q)
    n = len(cache["joints"])
    v_prev, a_prev = np.zeros(6), _a0(cache, gravity)
    forces = []
    for i in range(n):
        qi = cache["qidx"][i]
        s = cache["S"][i]
        v = xs[i] @ v_prev
        a = xs[i] @ a_prev
        if qi is not None:
            vj = s * qd[qi]
            v = v + vj
            a = a + s * qdd[qi] + crm(v) @ vj
        inertia = cache["I"][i]
        forces.append(inertia @ a + crf(v) @ (inertia @ v))
        v_prev, a_prev = v, a
    tau = [None] * dof
    for i in range(n - 1, -1, -1):
        qi = cache["qidx"][i]
        if qi is not None:
            tau[qi] = cache["S"][i] @ forces[i]
        if i > 0:
            forces[i - 1] = forces[i - 1] + xs[i].T @ forces[i]
    return xp.stack(tau)


def bias_forces(chain, q, qd, gravity=None):
    """``C(q, qd) qd + g(q)``."""
    return inverse_dynamics(chain, q, qd, qd * 0.0, gravity)


def gravity_torques(chain, q, gravity=None):
    xp = _ns(q)
    z = xp.zeros(chain.dof)
    return inverse_dynamics(chain, q, z, z, gravity)


def mass_matrix(chain: KinematicChain, q):
    """Joint-space inertia from RNEA columns (unit qdd, zero qd, zero gravity)."""
    xp = _ns(q)
    n = chain.dof
    z = xp.zeros(n)
    eye = np.eye(n)
    cols = [inverse_dynamics(chain, q, z, eye[j], gravity=np.zeros(3)) for j in range(n)]
    m = xp.stack(cols, axis=1)
    return 0.5 * (m + m.T)


def aba_forward_dynamics(chain: KinematicChain, q, qd, tau, gravity=None):
    """Articulated-body algorithm: joint accelerations for torques ``tau``."""
    return _aba(chain._cache, chain.dof, q, qd, tau, gravity, [l.name for l in chain.links])


def _aba(cache, dof, q, qd, tau, gravity=None, names=None):
    xp = _ns(q, qd, tau)
    checking = xp is np
    xs = _link_transforms(cache, q)
    n = len(cache["joints"])
    vs, cs, ia, pa = [], [], [], []
    v_prev = np.zeros(6)
    for i in range(n):
        qi = cache["qidx"][i]
        v = xs[i] @ v_prev
        c = np.zeros(6)
        if qi is not None:
            vj = cache["S"][i] * qd[qi]
            v = v + vj
            c = crm(v) @ vj
        inertia = cache["I"][i]
        vs.append(v)
        cs.append(c)
        ia.append(inertia)
        pa.append(crf(v) @ (inertia @ v))
        v_prev = v
    us, ds, uu = [None] * n, [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        qi = cache["qidx"][i]
        if qi is not None:
            s = cache["S"][i]
            u_vec = ia[i] @ s
            d = s @ u_vec
            if checking and not d > 1e-12:
                raise SingularInertia(f"articulated inertia of link {names[i] if names else i!r} not invertible")
            u = tau[qi] - s @ pa[i]
            us[i], ds[i], uu[i] = u_vec, d, u
            i_art = ia[i] - xp.outer(u_vec, u_vec) / d
            p_art = pa[i] + i_art @ cs[i] + u_vec * (u / d)
        else:
            i_art, p_art = ia[i], pa[i] + ia[i] @ cs[i]
        if i > 0:
            ia[i - 1] = ia[i - 1] + xs[i].T @ i_art @ xs[i]
            pa[i - 1] = pa[i - 1] + xs[i].T @ p_art
    qdd = [None] * dof
    a_prev = _a0(cache, gravity)
    for i in range(n):
        qi = cache["qidx"][i]
        a = xs[i] @ a_prev + cs[i]
        if qi is not None:
            acc = (uu[i] - us[i] @ a) / ds[i]
            qdd[qi] = acc
            a = a + cache["S"][i] * acc
        a_prev = a
    return xp.stack(qdd)


_JIT = {}


def jax_node_dynamics(chain: KinematicChain):
    """Jitted, node-batched accelerations and their derivatives for ``chain``.

    Returns ``(f, df, hw)``: ``f(X)`` gives accelerations per node row
    ``x = [q, qd, u]``, ``df(X)`` their Jacobians and ``hw(X, W)`` the
    Hessians of ``W[k] @ f(x_k)``. One compiled set serves every chain with
    the same joint layout; the link constants enter as traced parameters.
    """
    from ._jax import jax, jnp

    joints, dof = chain._cache["joints"], chain.dof
    if joints not in _JIT:
        def acc(params, x):
            model = _model_from_params(joints, params)
            return _aba(model, dof, x[:dof], x[dof:2 * dof], x[2 * dof:])

        def weighted(params, x, w):
            return w @ acc(params, x)

        _JIT[joints] = (jax.jit(jax.vmap(acc, in_axes=(None, 0))),
                        jax.jit(jax.vmap(jax.jacfwd(acc, argnums=1), in_axes=(None, 0))),
                        jax.jit(jax.vmap(jax.jacfwd(jax.grad(weighted, argnums=1), argnums=1),
                                         in_axes=(None, 0, 0))))
    f, df, hw = _JIT[joints]
    params = {k: jnp.asarray(v) for k, v in dynamics_params(chain).items()}
    return ((lambda X: np.asarray(f(params, X))), (lambda X: np.asarray(df(params, X))),
            (lambda X, W: np.asarray(hw(params, X, W))))


def forward_dynamics_crba(chain, q, qd, tau, gravity=None):
    """Reference solve ``M^{-1} (tau - C qd - g)``."""
    m = mass_matrix(chain, q)
    return np.linalg.solve(m, np.asarray(tau) - bias_forces(chain, q, qd, gravity))


def mechanical_energy(chain, q, qd, gravity=None):
    """Kinetic plus gravitational potential energy."""
    g = chain.gravity if gravity is None else np.asarray(gravity, dtype=float)
    kinetic = 0.5 * qd @ mass_matrix(chain, q) @ qd
    poses, _ = forward_kinematics(chain, q, check=False)
    potential = 0.0
    for link, (rot, pos) in zip(chain.links, poses):
        potential = potential - link.mass * g @ (pos + rot @ link.com)
    return kinetic + potential


def rk4_step(chain, q, qd, tau, dt, gravity=None):
    def f(qq, vv):
        return vv, aba_forward_dynamics(chain, qq, vv, tau, gravity)

    k1q, k1v = f(q, qd)
    k2q, k2v = f(q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, qd + dt * k3v)
    return (q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q),
            qd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


# -- construction helpers -------------------------------------------------------------------

def rpy_matrix(rpy: Sequence[float]) -> np.ndarray:
    """Fixed-axis roll-pitch-yaw, ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


def rod_inertia(mass, length, axis=0, radius=0.02):
    """Solid-cylinder inertia about its COM, long axis along ``axis``."""
    i_long = 0.5 * mass * radius**2
    i_perp = mass * (3 * radius**2 + length**2) / 12.0
    diag = np.full(3, i_perp)
    diag[axis] = i_long
    return np.diag(diag)


def planar_arm(lengths, masses=None, axis=(0.0, 0.0, 1.0), gravity=(0.0, 0.0, 0.0),
               point_mass=False, name="planar", limit=np.inf, effort=np.inf):
    """Planar revolute arm whose links extend along their local x axis."""
    masses = masses if masses is not None else [1.0] * len(lengths)
    links = []
    prev = 0.0
    for i, (l, m) in enumerate(zip(lengths, masses)):
        inertia = np.zeros((3, 3)) if point_mass else rod_inertia(m, l)
        com = [l, 0, 0] if point_mass else [l / 2, 0, 0]
        links.append(Link(f"link{i}", "revolute", axis, translation=[prev, 0, 0], mass=m, com=com,
                          inertia=inertia, lower=-limit, upper=limit, effort_limit=effort))
        prev = l
    return KinematicChain(tuple(links), gravity=gravity, tip_translation=[prev, 0, 0], name=name)
