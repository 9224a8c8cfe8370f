"""2-D particle-spring bodies struck by a rigid tool profile, with strain fracture.

The target is a triangular-lattice disc of point masses joined by springs
and dashpots. A moving convex tool polygon and the ground push on it through
penalty contact. Any spring stretched past its strain limit breaks for good,
and the fragment count is the number of connected components of the
unbroken-spring graph.

World coordinates are the vertical plane (x, z) of the robot; the simulator
calls the vertical axis ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from numba import njit
from scipy.spatial import cKDTree

from .errors import Instability
from .table import VariableTable

MAX_SPEED = 1e3
CONTACT_FACTOR = 100.0
GEOMETRY_FACTOR = np.sqrt(3.0) / 2.0  # triangular lattice: k = (sqrt(3)/2) E t


@dataclass(frozen=True)
class BodySpec:
    radius: float = 0.03
    spacing: float = 0.005
    E_y: float = 2.0e4
    eps_f: float = 0.1
    thickness: float = 0.02
    density: float = 1000.0
    damping: float = 0.02
    ground: float = 0.0
    center_x: float = 0.55
    heterogeneity: float = 0.05
    friction: float = 0.5
    # lattice shift in column spacings; 0.5 puts the vertical mid-plane
    # between two columns, where a thin edge wedges them apart
    column_offset: float = 0.0
    # the target's own weight is negligible next to strike loads and would
    # crush so soft a surrogate; enable it for settling studies
    gravity: float = 0.0

    def __post_init__(self):
        if self.spacing <= 0 or self.radius < self.spacing:
            raise ValueError("need spacing > 0 and radius >= spacing")
        if self.eps_f <= 0 or self.E_y <= 0 or self.thickness <= 0 or self.density <= 0:
            raise ValueError("E_y, eps_f, thickness and density must be positive")
        if not 0 <= self.heterogeneity < 1 or self.damping < 0:
            raise ValueError("heterogeneity must lie in [0, 1) and damping be >= 0")

    @property
    def stiffness(self) -> float:
        return GEOMETRY_FACTOR * self.E_y * self.thickness

    @property
    def particle_mass(self) -> float:
        return self.density * self.thickness * GEOMETRY_FACTOR * self.spacing**2

    @property
    def top(self) -> np.ndarray:
        """Highest contact point of the undeformed disc, straight above its center."""
        pts = _lattice(self.radius, self.spacing, self.column_offset)
        column = pts[np.abs(pts[:, 0]) <= (0.25 * np.sqrt(3) + 1e-9) * self.spacing]
        r = 0.5 * self.spacing
        return np.array([self.center_x, self.ground + self.radius + r + column[:, 1].max() + r])


@dataclass
class DeformableBody2D:
    x: np.ndarray          # (n, 2) positions
    v: np.ndarray          # (n, 2) velocities
    m: np.ndarray          # (n,) masses
    springs: np.ndarray    # (s, 2) particle index pairs
    rest: np.ndarray       # (s,) rest lengths
    k: np.ndarray          # (s,) stiffness
    eps_f: np.ndarray      # (s,) strain limits
    broken: np.ndarray     # (s,) bool
    damping: float
    ground: float
    contact_radius: float
    gravity: float = 9.81
    friction: float = 0.5
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if np.any(self.rest <= 0):
            raise ValueError("spring rest lengths must be positive")

    @property
    def n_particles(self) -> int:
        return len(self.m)

    @property
    def contact_stiffness(self) -> float:
        return CONTACT_FACTOR * float(np.max(self.k))

    def copy(self) -> "DeformableBody2D":
        return replace(self, x=self.x.copy(), v=self.v.copy(), broken=self.broken.copy())

    def strains(self) -> np.ndarray:
        d = self.x[self.springs[:, 1]] - self.x[self.springs[:, 0]]
        return (np.linalg.norm(d, axis=1) - self.rest) / self.rest

    def elastic_energy(self) -> float:
        live = ~self.broken
        e = self.strains()[live] * self.rest[live]
        return float(0.5 * np.sum(self.k[live] * e * e))

    def kinetic_energy(self) -> float:
        return float(0.5 * np.sum(self.m * np.sum(self.v**2, axis=1)))

    def momentum(self) -> np.ndarray:
        return self.m @ self.v


def _lattice(radius, spacing, offset=0.0):
    """Triangular lattice points within ``radius`` of the origin.

    Lattice columns are vertical, shifted sideways by ``offset`` column
    spacings, so a center column reaches the top of the disc; points are
    ordered by height, then x.
    """
    n = int(np.ceil(radius / spacing)) + 2
    j, i = np.mgrid[-n:n + 1, -n:n + 1]
    pts = np.column_stack([((j + offset) * np.sqrt(3) / 2).ravel() * spacing, (i + 0.5 * j).ravel() * spacing])
    keep = np.linalg.norm(pts, axis=1) <= radius + 1e-9 * spacing
    pts = pts[keep]
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    return pts[order]


def build_body(spec: BodySpec = BodySpec(), seed=0) -> DeformableBody2D:
    """Disc resting on the ground; ``seed`` drives the per-spring strength scatter."""
    pts = _lattice(spec.radius, spec.spacing, spec.column_offset)
    pairs = np.array(sorted(cKDTree(pts).query_pairs(1.01 * spec.spacing)), dtype=int).reshape(-1, 2)
    r = 0.5 * spec.spacing
    center = np.array([spec.center_x, spec.ground + spec.radius + r])
    rest = np.linalg.norm(pts[pairs[:, 1]] - pts[pairs[:, 0]], axis=1)
    rng = np.random.default_rng(seed)
    scatter = 1.0 + spec.heterogeneity * rng.uniform(-1.0, 1.0, len(pairs))
    n = len(pts)
    return DeformableBody2D(
        x=pts + center, v=np.zeros((n, 2)), m=np.full(n, spec.particle_mass), springs=pairs, rest=rest,
        k=np.full(len(pairs), spec.stiffness), eps_f=spec.eps_f * scatter,
        broken=np.zeros(len(pairs), dtype=bool), damping=spec.damping, ground=spec.ground,
        contact_radius=r, gravity=spec.gravity, friction=spec.friction, center=center)


def hex_disc_count(radius, spacing) -> float:
    """Area estimate of the lattice-point count: disc area over the area per site."""
    return np.pi * radius**2 / (GEOMETRY_FACTOR * spacing**2)


# -- tool -----------------------------------------------------------------------------------

def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ToolProfile:
    """Rigid convex polygon following a sampled path, then coasting.

    ``vertices`` are counter-clockwise in the tool frame, whose x axis runs
    along the contact face and whose y axis is the outward face normal.
    ``angles`` give the world angle of that normal. Past the last sample the
    profile keeps its orientation and moves as a free body of ``mass``
    pushed back by contact; with ``mass=None`` it stays at the last pose.
    """

    vertices: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    angles: np.ndarray
    mass: float | None = None

    def __post_init__(self):
        fix = lambda k, v: object.__setattr__(self, k, v)
        fix("vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 2))
        fix("times", np.asarray(self.times, dtype=float).reshape(-1))
        fix("positions", np.asarray(self.positions, dtype=float).reshape(-1, 2))
        fix("angles", np.asarray(self.angles, dtype=float).reshape(-1))
        if not len(self.times) == len(self.positions) == len(self.angles) >= 1:
            raise ValueError("path arrays must share a nonzero length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("path times must increase")
        v = self.vertices
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if len(v) < 3 or area <= 1e-14:
            raise ValueError("tool shape must be a non-degenerate counter-clockwise polygon")
        if self.mass is not None and self.mass <= 0:
            raise ValueError("tool mass must be positive")

    @classmethod
    def rectangle(cls, width, depth, times, positions, angles, mass=None):
        """Contact face of ``width`` centered on the path point, ``depth`` behind it."""
        w = 0.5 * width
        verts = [[-w, -depth], [w, -depth], [w, 0.0], [-w, 0.0]]
        return cls(verts, times, positions, angles, mass)

    @classmethod
    def from_basis(cls, basis, times, positions, angles, mass=None):
        return cls.rectangle(basis.width, basis.depth, times, positions, angles, mass)

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def sample(self, t):
        """Prescribed (position, velocity, angle) at ``t`` within the path."""
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return self.positions[0].copy(), np.zeros(2) if len(ts) == 1 else self._vel(0), self.angles[0]
        i = min(int(np.searchsorted(ts, t, side="right")) - 1, len(ts) - 2)
        s = (t - ts[i]) / (ts[i + 1] - ts[i])
        s = min(s, 1.0)
        p = (1 - s) * self.positions[i] + s * self.positions[i + 1]
        a = (1 - s) * self.angles[i] + s * self.angles[i + 1]
        return p, self._vel(i), a

    def _vel(self, i):
        return (self.positions[i + 1] - self.positions[i]) / (self.times[i + 1] - self.times[i])

    def world_vertices(self, position, angle):
        return position + self.vertices @ _rot(angle - np.pi / 2).T


@dataclass
class ToolState:
    t: float
    position: np.ndarray
    velocity: np.ndarray
    angle: float
    free: bool = False


def tool_state(tool: ToolProfile, t: float) -> ToolState:
    p, v, a = tool.sample(t)
    return ToolState(t, p, v, a, free=False)


# -- dynamics ------------------------------------------------------------------------------

@dataclass
class StepRecord:
    t: float
    contact_force: float
    contact_area: float
    max_strain: float
    elastic_energy: float
    kinetic_energy: float
    tool_speed: float
    tool_angle: float
    fragments: int
    external: np.ndarray = field(default_factory=lambda: np.zeros(2), repr=False)


LOG_FIELDS = ("t", "contact_force", "contact_area", "max_strain", "elastic_energy", "kinetic_energy",
              "tool_speed", "tool_angle", "fragments")
LOG_UNITS = {"t": "s", "contact_force": "N", "contact_area": "m", "max_strain": "1",
             "elastic_energy": "J", "kinetic_energy": "J", "tool_speed": "m/s", "tool_angle": "rad",
             "fragments": "1"}


@njit(cache=True)
def _force_kernel(x, v, m, springs, rest, k, live, damping, gravity, verts, has_tool, kc, r, ground,
                  friction):
    n = x.shape[0]
    internal = np.zeros((n, 2))
    strain = np.empty(springs.shape[0])
    for s in range(springs.shape[0]):
        i, j = springs[s, 0], springs[s, 1]
        dx, dy = x[j, 0] - x[i, 0], x[j, 1] - x[i, 1]
        L = np.sqrt(dx * dx + dy * dy)
        strain[s] = (L - rest[s]) / rest[s]
        if not live[s]:
            continue
        ux, uy = dx / L, dy / L
        f = k[s] * (L - rest[s]) + damping * ((v[j, 0] - v[i, 0]) * ux + (v[j, 1] - v[i, 1]) * uy)
        internal[i, 0] += f * ux
        internal[i, 1] += f * uy
        internal[j, 0] -= f * ux
        internal[j, 1] -= f * uy
    external = np.zeros((n, 2))
    tool_f = np.zeros(2)
    touching = np.zeros(n, dtype=np.bool_)
    nv = verts.shape[0]
    for p in range(n):
        external[p, 1] -= gravity * m[p]
        px, py = x[p, 0], x[p, 1]
        if has_tool:
            inside = True
            best_side, bnx, bny = -np.inf, 0.0, 0.0
            best_d, cx, cy = np.inf, 0.0, 0.0
            for e in range(nv):
                ax, ay = verts[e, 0], verts[e, 1]
                bx, by = verts[(e + 1) % nv, 0], verts[(e + 1) % nv, 1]
                ex, ey = bx - ax, by - ay
                le = np.sqrt(ex * ex + ey * ey)
                nx, ny = ey / le, -ex / le
                side = (px - ax) * nx + (py - ay) * ny
                if side > 0:
                    inside = False
                if side > best_side:
                    best_side, bnx, bny = side, nx, ny
                t = ((px - ax) * ex + (py - ay) * ey) / (le * le)
                t = min(max(t, 0.0), 1.0)
                qx, qy = ax + t * ex, ay + t * ey
                d = np.sqrt((px - qx) ** 2 + (py - qy) ** 2)
                if d < best_d:
                    best_d, cx, cy = d, qx, qy
            if inside:
                sd, nx, ny = best_side, bnx, bny
            else:
                sd, nx, ny = best_d, (px - cx) / best_d, (py - cy) / best_d
            if sd < r:
                touching[p] = True
                fx, fy = kc * (r - sd) * nx, kc * (r - sd) * ny
                external[p, 0] += fx
                external[p, 1] += fy
                tool_f[0] += fx
                tool_f[1] += fy
        pen = r - (py - ground)
        if pen > 0:
            fn = kc * pen
            vt = v[p, 0]
            external[p, 1] += fn
            external[p, 0] -= friction * fn * vt / np.sqrt(vt * vt + 1e-6)
    return internal, external, tool_f, touching, strain


def _forces(body: DeformableBody2D, state: ToolState | None, tool: ToolProfile | None, contact=True):
    """(internal, external, tool contact force, touching mask, strains) at the current state."""
    has_tool = contact and state is not None
    verts = tool.world_vertices(state.position, state.angle) if has_tool else np.zeros((3, 2))
    kc = body.contact_stiffness if contact else 0.0
    ground = body.ground if contact else -np.inf
    return _force_kernel(body.x, body.v, body.m, body.springs, body.rest, body.k, ~body.broken,
                         float(body.damping), float(body.gravity), verts, has_tool, kc,
                         float(body.contact_radius), float(ground), float(body.friction))


@njit(cache=True)
def _settle(x, v, m, springs, rest, k, broken, eps_f):
    """Mark newly failed springs in place; return strain and energy summaries."""
    newly = False
    max_strain, elastic = 0.0, 0.0
    for s in range(springs.shape[0]):
        if broken[s]:
            continue
        i, j = springs[s, 0], springs[s, 1]
        dx, dy = x[j, 0] - x[i, 0], x[j, 1] - x[i, 1]
        e = (np.sqrt(dx * dx + dy * dy) - rest[s]) / rest[s]
        if e > eps_f[s]:
            broken[s] = True
            newly = True
            continue
        max_strain = max(max_strain, e)
        elastic += 0.5 * k[s] * (e * rest[s]) ** 2
    kinetic, fastest, worst = 0.0, 0.0, -1
    for p in range(x.shape[0]):
        v2 = v[p, 0] ** 2 + v[p, 1] ** 2
        kinetic += 0.5 * m[p] * v2
        if not v2 <= fastest:
            fastest, worst = v2, p
    return newly, max_strain, elastic, kinetic, np.sqrt(fastest), worst


def count_fragments(body: DeformableBody2D) -> int:
    live = ~body.broken
    n = body.n_particles
    s = body.springs[live]
    g = coo_matrix((np.ones(len(s)), (s[:, 0], s[:, 1])), shape=(n, n))
    return int(connected_components(g, directed=False)[0])


class Simulator:
    """Stateful stepping of one body against one tool."""

    def __init__(self, body: DeformableBody2D, tool: ToolProfile | None, t0=None, contact=True):
        self.body = body
        self.tool = tool
        self.contact = contact
        self.t = float(tool.start if t0 is None and tool is not None else (t0 or 0.0))
        self.state = tool_state(tool, self.t) if tool is not None else None
        self._fragments = count_fragments(body)

    def step(self, dt: float) -> StepRecord:
        if not 0 < dt <= 1e-3:
            raise ValueError("dt must lie in (0, 1e-3] s")
        body, tool, st = self.body, self.tool, self.state
        internal, external, tool_f, touching, _ = _forces(body, st, tool, self.contact)
        body.v = body.v + dt * (internal + external) / body.m[:, None]
        body.x = body.x + dt * body.v
        newly, max_strain, elastic, kinetic, speed, worst = _settle(
            body.x, body.v, body.m, body.springs, body.rest, body.k, body.broken, body.eps_f)
        if not speed <= MAX_SPEED:
            raise Instability(f"particle {worst} speed {speed:.3g} m/s exceeds {MAX_SPEED:g} at t={self.t:.6g} s; "
                              "reduce dt or contact stiffness")
        self.t += dt
        if tool is not None:
            reaction = -tool_f
            if self.t <= tool.end + 1e-12 or tool.mass is None:
                self.state = tool_state(tool, min(self.t, tool.end))
                if self.t > tool.end and tool.mass is None:
                    self.state.velocity = np.zeros(2)
            else:
                if not st.free:
                    st = ToolState(st.t, st.position.copy(), st.velocity.copy(), st.angle, True)
                st.velocity = st.velocity + dt * reaction / tool.mass
                st.position = st.position + dt * st.velocity
                st.t = self.t
                self.state = st
        if newly:
            self._fragments = count_fragments(body)
        st = self.state
        return StepRecord(
            t=self.t, contact_force=float(np.hypot(*tool_f)),
            contact_area=float(np.count_nonzero(touching) * 2 * body.contact_radius),
            max_strain=max_strain, elastic_energy=elastic, kinetic_energy=kinetic,
            tool_speed=float(np.hypot(*st.velocity)) if st is not None else 0.0,
            tool_angle=float(st.angle) if st is not None else 0.0,
            fragments=self._fragments, external=external.sum(axis=0))


def step(body: DeformableBody2D, tool: ToolProfile | None, t: float, dt: float, contact=True):
    """One step from time ``t``; returns the updated copy and its record."""
    sim = Simulator(body.copy(), tool, t0=t, contact=contact)
    rec = sim.step(dt)
    return sim.body, rec


@dataclass
class PropertyLog:
    records: list

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def arrays(self) -> dict:
        return {k: self.column(k) for k in LOG_FIELDS}

    def peak(self, name) -> float:
        c = self.column(name)
        return float(np.max(c)) if len(c) else 0.0

    @property
    def final_fragments(self) -> int:
        return int(self.records[-1].fragments) if self.records else 1


def simulate(body: DeformableBody2D, tool: ToolProfile | None, duration: float, dt: float,
             t0=None, contact=True):
    """Step ``body`` (copied) for ``duration``; returns ``(PropertyLog, final body)``."""
    n = int(round(duration / dt))
    if n < 1 or abs(n * dt - duration) > 1e-9 * max(duration, dt):
        raise ValueError("duration must be a positive multiple of dt")
    sim = Simulator(body.copy(), tool, t0=t0, contact=contact)
    records = [sim.step(dt) for _ in range(n)]
    return PropertyLog(records), sim.body


def classify_effect(pieces: int, thresholds=(2, 6)) -> str:
    lo, hi = thresholds
    if lo < 2 or hi < lo:
        raise ValueError("thresholds need lo >= 2 and hi >= lo")
    if pieces < lo:
        return "uncracked"
    return "cracked" if pieces <= hi else "smashed"


def broken_midpoints(body: DeformableBody2D, reference: DeformableBody2D | None = None) -> np.ndarray:
    """Rest-configuration midpoints of the broken springs."""
    x = (reference or body).x
    s = body.springs[body.broken]
    return 0.5 * (x[s[:, 0]] + x[s[:, 1]])


# -- scenarios and demonstrations ------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Body, strike profile and trial plan for one task.

    Speeds are tool speeds at impact (m/s); ``approach`` is the velocity
    direction measured from straight down (rad, positive toward +x) and
    ``d_tool`` the angle between the face normal and the velocity (rad).
    """

    name: str = "crack"
    body: BodySpec = BodySpec()
    width: float = 0.02
    depth: float = 0.02
    tool_mass: float = 0.05
    speed: tuple = (0.1, 3.0)
    approach: tuple = (-0.3, 0.3)
    d_tool: tuple = (0.0, 0.0)
    accel: tuple = (0.0, 20.0)
    lead: float = 0.005
    duration: float = 0.04
    dt: float = 4e-5
    path_step: float = 1e-3
    jitter: float = 0.1
    thresholds: tuple = (2, 6)

    def __post_init__(self):
        for name in ("speed", "approach", "d_tool", "accel", "thresholds"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"scenario {name} range not ordered")
        if self.speed[0] < 0:
            raise ValueError("speeds must be non-negative")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")

    @property
    def contact_point(self) -> np.ndarray:
        return self.body.top

    def jittered_body(self, rng) -> BodySpec:
        f = 1.0 + self.jitter * rng.uniform(-1.0, 1.0, 2)
        return replace(self.body, E_y=self.body.E_y * f[0], eps_f=self.body.eps_f * f[1])


def strike_path(p_c, velocity, accel, lead, step):
    """Constant-acceleration approach reaching ``p_c`` with ``velocity`` at t = 0."""
    n = max(int(round(lead / step)), 1)
    t = np.linspace(-n * step, 0.0, n + 1)
    p = p_c[None] + t[:, None] * velocity[None] + 0.5 * t[:, None] ** 2 * accel[None]
    return t, p


def strike_profile(scenario: Scenario, speed, approach, d_tool, accel=0.0, mass=None):
    """Prescribed strike toward the body top; the face normal sits at ``d_tool`` from the velocity."""
    direction = np.array([np.sin(approach), -np.cos(approach)])
    v = speed * direction
    a = accel * direction
    t, p = strike_path(scenario.contact_point, v, a, scenario.lead, scenario.path_step)
    # the face normal points ahead of the tool: along the velocity at d_tool = 0
    theta = np.arctan2(direction[1], direction[0]) + d_tool
    tool = ToolProfile.rectangle(scenario.width, scenario.depth, t, p, np.full(len(t), theta),
                                 scenario.tool_mass if mass is None else mass)
    return tool, v, a, theta


def run_strike(scenario: Scenario, tool: ToolProfile, body_spec: BodySpec, seed):
    body = build_body(body_spec, seed)
    duration = scenario.lead + scenario.duration
    n = int(round(duration / scenario.dt))
    return simulate(body, tool, n * scenario.dt, scenario.dt, t0=tool.start) + (body,)


ACTION_COLUMNS = ("p_x", "p_z", "v_x", "v_z", "a_x", "a_z", "theta", "d")
SIM_COLUMNS = ("F", "eps", "U", "K", "A")
PARENTS = {"v_x": "p_x", "v_z": "p_z", "a_x": "v_x", "a_z": "v_z"}
UNITS = {"p_x": "m", "p_z": "m", "v_x": "m/s", "v_z": "m/s", "a_x": "m/s^2", "a_z": "m/s^2", "theta": "rad",
         "d": "rad", "F": "N", "eps": "1", "U": "J", "K": "J", "A": "m", "n": "1", "E_y": "Pa",
         "eps_f": "1"}


def _impact_features(scenario, v, a, theta):
    """Action features at impact from central differences over the sampled approach."""
    h = scenario.path_step
    t = np.array([-h, 0.0, h])
    p = scenario.contact_point[None] + t[:, None] * v[None] + 0.5 * t[:, None] ** 2 * a[None]
    vel = (p[2] - p[0]) / (2 * h)
    acc = (p[2] - 2 * p[1] + p[0]) / h**2
    speed = np.linalg.norm(vel)
    normal = np.array([np.cos(theta), np.sin(theta)])
    d = float(np.arccos(np.clip(normal @ vel / speed, -1, 1))) if speed > 0 else 0.0
    return {"p_x": p[1][0], "p_z": p[1][1], "v_x": vel[0], "v_z": vel[1], "a_x": acc[0], "a_z": acc[1],
            "theta": theta, "d": d}


def generate_demonstrations(scenario: Scenario, n_trials: int, seed=0, speeds=None,
                            with_parameters=False) -> VariableTable:
    """Seeded strikes with varied speed and orientation, one table row per trial.

    ``speeds`` overrides the sampled impact speeds (one per trial).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rows = {k: [] for k in ACTION_COLUMNS + SIM_COLUMNS + ("n", "E_y", "eps_f")}
    for i in range(n_trials):
        rng = np.random.default_rng([seed, i])
        speed = rng.uniform(*scenario.speed)
        approach = rng.uniform(*scenario.approach)
        d_tool = rng.uniform(*scenario.d_tool)
        accel = rng.uniform(*scenario.accel)
        if speeds is not None:
            speed = float(speeds[i])
        spec = scenario.jittered_body(rng)
        tool, v, a, theta = strike_profile(scenario, speed, approach, d_tool, accel)
        log, final, _ = run_strike(scenario, tool, spec, [seed, i])
        feats = _impact_features(scenario, v, a, theta)
        for k, val in feats.items():
            rows[k].append(val)
        rows["F"].append(log.peak("contact_force"))
        rows["eps"].append(log.peak("max_strain"))
        rows["U"].append(log.peak("elastic_energy"))
        rows["K"].append(log.peak("kinetic_energy"))
        rows["A"].append(log.peak("contact_area"))
        rows["n"].append(float(log.final_fragments))
        rows["E_y"].append(spec.E_y)
        rows["eps_f"].append(spec.eps_f)
    names = ACTION_COLUMNS + SIM_COLUMNS + ("n",) + (("E_y", "eps_f") if with_parameters else ())
    levels = {k: "Action" for k in ACTION_COLUMNS}
    levels.update({k: "Simulation" for k in SIM_COLUMNS + ("E_y", "eps_f")})
    levels["n"] = "Effect"
    return VariableTable.from_arrays({k: np.array(rows[k], dtype=float) for k in names},
                                     {k: levels[k] for k in names}, PARENTS,
                                     {k: UNITS[k] for k in names})
