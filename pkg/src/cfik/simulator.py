"""Kinematic scene simulation and verification.

A scene is a set of arms with end-effector waypoint schedules plus scripted
moving obstacles. Each tick the obstacles advance, targets are interpolated,
the planner produces new configurations, and the applied state is logged.
There are no dynamics: planned configurations are applied directly.

Logs are one JSON header line (self-describing: effective configuration and
exact column order) followed by CSV rows. ``oracle_check`` re-validates a log
with discrete per-tick distances plus a continuous constant-velocity check
between consecutive ticks, which catches pairs tunneling through each other
inside a timestep.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .chain import KinematicChain, forward_kinematics
from .geometry import Pose, slerp
from .ik import IkParams
from .planner import ArmState, Planner, PlanRequest
from .pso import SwarmConfig
from .rvo import Sphere, decompose_chain, segment_sphere_counts

SCENE_DIR_ENV = "CFIK_SCENE_DIR"


class SceneError(Exception):
    pass


class InitialCollision(SceneError):
    """The scene starts with interpenetrating geometry; nothing can be planned."""


# ---- obstacle motion scripts -------------------------------------------------


@dataclass
class ObstacleScript:
    obstacle_id: str
    kind: str  # constant_velocity | waypoints | parametric
    radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    points: list = field(default_factory=list)  # [(t, pos)] for waypoints
    orbit_radius: float = 0.0
    angular_speed: float = 0.0
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    phase: float = 0.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.axis = np.asarray(self.axis, dtype=float).reshape(3)
        if self.kind not in ("constant_velocity", "waypoints", "parametric"):
            raise SceneError(f"unknown obstacle kind '{self.kind}'")
        if self.radius <= 0.0:
            raise SceneError("obstacle radius must be positive")
        if self.kind == "waypoints":
            if not self.points:
                raise SceneError("waypoints obstacle needs at least one point")
            self.points = sorted(
                [(float(t), np.asarray(p, dtype=float).reshape(3)) for t, p in self.points],
                key=lambda tp: tp[0],
            )
        if self.kind == "parametric":
            n = np.linalg.norm(self.axis)
            if n <= 0.0:
                raise SceneError("parametric obstacle needs a non-zero axis")
            self.axis = self.axis / n
            pick = np.array([1.0, 0.0, 0.0]) if abs(self.axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            e1 = np.cross(self.axis, pick)
            self._e1 = e1 / np.linalg.norm(e1)
            self._e2 = np.cross(self.axis, self._e1)

    def position(self, t: float) -> np.ndarray:
        if self.kind == "constant_velocity":
            return self.center + t * self.velocity
        if self.kind == "parametric":
            a = self.angular_speed * t + self.phase
            return self.center + self.orbit_radius * (math.cos(a) * self._e1 + math.sin(a) * self._e2)
        pts = self.points
        if t <= pts[0][0]:
            return pts[0][1].copy()
        if t >= pts[-1][0]:
            return pts[-1][1].copy()
        for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
            if t0 <= t <= t1:
                u = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
                return p0 + u * (p1 - p0)
        return pts[-1][1].copy()

    def velocity_at(self, t: float, dt: float) -> np.ndarray:
        """Exact where the script is analytic, forward finite difference otherwise."""
        if self.kind == "constant_velocity":
            return self.velocity.copy()
        if self.kind == "parametric":
            a = self.angular_speed * t + self.phase
            return (
                self.orbit_radius
                * self.angular_speed
                * (-math.sin(a) * self._e1 + math.cos(a) * self._e2)
            )
        return (self.position(t + dt) - self.position(t)) / dt

    def sphere(self, t: float, dt: float) -> Sphere:
        return Sphere(self.position(t), self.radius, self.velocity_at(t, dt), owner=self.obstacle_id)


# ---- scene -------------------------------------------------------------------


@dataclass
class ManipulatorSpec:
    chain: KinematicChain
    base_pose: Pose
    initial_config: np.ndarray
    waypoints: list  # [(t, Pose)] world-frame end-effector schedule

    def __post_init__(self):
        self.initial_config = self.chain.check_config(self.initial_config)
        if not self.chain.within_limits(self.initial_config):
            raise SceneError(f"initial config of '{self.chain.name}' violates joint limits")
        if not self.waypoints:
            raise SceneError(f"manipulator '{self.chain.name}' needs at least one waypoint")
        self.waypoints = sorted(self.waypoints, key=lambda wp: wp[0])

    def target_at(self, t: float) -> Pose:
        wps = self.waypoints
        if t <= wps[0][0]:
            return wps[0][1]
        if t >= wps[-1][0]:
            return wps[-1][1]
        for (t0, p0), (t1, p1) in zip(wps, wps[1:]):
            if t0 <= t <= t1:
                u = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
                pos = p0.position + u * (p1.position - p0.position)
                return Pose(pos, slerp(p0.orientation, p1.orientation, u))
        return wps[-1][1]


@dataclass
class SimParams:
    dt: float = 0.01
    duration: float = 10.0
    tau: float = 5.0

    def __post_init__(self):
        if self.dt <= 0.0 or self.duration < 0.0 or self.tau <= 0.0:
            raise SceneError("sim parameters must satisfy dt > 0, duration >= 0, tau > 0")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class Scene:
    name: str
    manipulators: list
    obstacles: list
    sim: SimParams = field(default_factory=SimParams)
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    ik: IkParams = field(default_factory=IkParams)
    mode: str = "sequential"

    def effective_header(self) -> dict:
        return {
            "scene": self.name,
            "dt": self.sim.dt,
            "duration": self.sim.duration,
            "tau": self.sim.tau,
            "mode": self.mode,
            "pso": {
                "N": self.swarm.num_particles,
                "T": self.swarm.max_iterations,
                "c1": self.swarm.cognitive,
                "c2": self.swarm.social,
                "alpha": self.swarm.collision_weight,
                "beta": self.swarm.deviation_weight,
                "lambda": None
                if self.swarm.joint_weights is None
                else self.swarm.joint_weights.tolist(),
                "rng_seed": self.swarm.rng_seed,
                "inertia": self.swarm.inertia,
                "velocity_clamp": self.swarm.velocity_clamp,
                "reciprocity": self.swarm.reciprocity,
            },
            "ik": {
                "pos_tol": self.ik.pos_tol,
                "ori_tol": self.ik.ori_tol,
                "max_iterations": self.ik.max_iterations,
                "restarts": self.ik.restarts,
            },
        }


def _pose_from_json(d) -> Pose:
    if "quat" in d:
        return Pose(np.asarray(d["pos"], dtype=float), np.asarray(d["quat"], dtype=float))
    return Pose.from_pos_rpy(d["pos"], d.get("rpy", (0.0, 0.0, 0.0)))


def scene_search_dirs() -> list:
    dirs = []
    env = os.environ.get(SCENE_DIR_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(resources.files("cfik") / "scenes"))
    return dirs


def resolve_scene_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    for d in scene_search_dirs():
        for cand in (d / name, d / f"{name}.json"):
            if cand.exists():
                return cand
    raise SceneError(f"scene '{name}' not found (searched {[str(d) for d in scene_search_dirs()]})")


def scene_from_dict(d: dict, base_dir: Path | None = None) -> Scene:
    sim = SimParams(**d.get("sim", {}))
    pso = d.get("pso", {})
    swarm = SwarmConfig(
        num_particles=int(pso.get("N", 2)),
        max_iterations=int(pso.get("T", 2)),
        cognitive=float(pso.get("c1", 2.0)),
        social=float(pso.get("c2", 2.0)),
        collision_weight=float(pso.get("alpha", 10.0)),
        deviation_weight=float(pso.get("beta", 1.0)),
        joint_weights=None if pso.get("lambda") is None else np.asarray(pso["lambda"], dtype=float),
        horizon=sim.tau,
        rng_seed=int(pso.get("rng_seed", 0)),
        inertia=float(pso.get("inertia", 1.0)),
        velocity_clamp=float(pso.get("velocity_clamp", 0.25)),
        reciprocity=float(pso.get("reciprocity", 0.5)),
    )
    ikd = d.get("ik", {})
    ik = IkParams(
        pos_tol=float(ikd.get("pos_tol", 1e-4)),
        ori_tol=float(ikd.get("ori_tol", 1e-3)),
        max_iterations=int(ikd.get("max_iterations", 200)),
        restarts=int(ikd.get("restarts", 0)),
    )
    manips = []
    for m in d.get("manipulators", []):
        if "chain_file" in m:
            path = Path(m["chain_file"])
            if not path.is_absolute():
                for cand_dir in ([base_dir] if base_dir else []) + scene_search_dirs():
                    cand = Path(cand_dir) / path
                    if cand.exists():
                        path = cand
                        break
            chain = KinematicChain.load(path)
        else:
            chain = KinematicChain.from_dict(m["chain"])
        if "name" in m:
            chain = chain.with_name(m["name"])
        base = _pose_from_json(m["base"]) if "base" in m else Pose.identity()
        wps = [(float(w["t"]), _pose_from_json(w)) for w in m["waypoints"]]
        manips.append(ManipulatorSpec(chain, base, np.asarray(m["initial_config"], dtype=float), wps))
    names = [m.chain.name for m in manips]
    if len(set(names)) != len(names):
        raise SceneError("manipulator chain names must be unique")
    obstacles = []
    for o in d.get("obstacles", []):
        obstacles.append(
            ObstacleScript(
                obstacle_id=o["id"],
                kind=o["kind"],
                radius=float(o["radius"]),
                center=o.get("center", (0.0, 0.0, 0.0)),
                velocity=o.get("velocity", (0.0, 0.0, 0.0)),
                points=[(p["t"], p["pos"]) for p in o.get("points", [])],
                orbit_radius=float(o.get("orbit_radius", 0.0)),
                angular_speed=float(o.get("angular_speed", 0.0)),
                axis=o.get("axis", (0.0, 0.0, 1.0)),
                phase=float(o.get("phase", 0.0)),
            )
        )
    ids = [o.obstacle_id for o in obstacles]
    if len(set(ids)) != len(ids) or set(ids) & set(names):
        raise SceneError("obstacle ids must be unique and distinct from manipulator names")
    return Scene(
        name=d.get("name", "scene"),
        manipulators=manips,
        obstacles=obstacles,
        sim=sim,
        swarm=swarm,
        ik=ik,
        mode=d.get("mode", "sequential"),
    )


def load_scene(path) -> Scene:
    path = resolve_scene_path(str(path))
    with open(path) as f:
        return scene_from_dict(json.load(f), base_dir=path.parent)


# ---- trajectory log ------------------------------------------------------------


@dataclass
class TickRecord:
    tick: int
    time: float
    configs: list
    poses: list
    spheres: list
    min_clearance: float
    phi: float
    psi_agg: float
    solve_ms: float
    arm_min_margin: list
    arm_pso_iters: list
    arm_degraded: list


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class TrajectoryLog:
    header: dict
    records: list

    def columns(self) -> list:
        return self.header["columns"]

    def write(self, path):
        with open(path, "w", newline="") as f:
            f.write(json.dumps(self.header, separators=(",", ":"), sort_keys=True) + "\n")
            w = csv.writer(f)
            for r in self.records:
                row = [str(r.tick), _fmt(r.time)]
                for q in r.configs:
                    row.extend(_fmt(v) for v in q)
                for s in r.spheres:
                    row.extend(
                        _fmt(v)
                        for v in (s.center[0], s.center[1], s.center[2], s.radius,
                                  s.velocity[0], s.velocity[1], s.velocity[2])
                    )
                row.extend((_fmt(r.min_clearance), _fmt(r.phi), _fmt(r.psi_agg), _fmt(r.solve_ms)))
                for i in range(len(r.configs)):
                    row.append(_fmt(r.arm_min_margin[i]))
                    row.append(str(int(r.arm_pso_iters[i])))
                    row.append(str(int(r.arm_degraded[i])))
                for p in r.poses:
                    row.extend(_fmt(v) for v in (*p.position, *p.orientation))
                w.writerow(row)

    @classmethod
    def read(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as f:
            first = f.readline()
            if not first.strip():
                raise SceneError("empty trajectory file")
            header = json.loads(first)
            for key in ("joint_counts", "spheres", "arm_names", "columns"):
                if key not in header:
                    raise SceneError(f"trajectory header is missing '{key}'")
            joint_counts = header["joint_counts"]
            sphere_meta = header["spheres"]
            n_arms = len(joint_counts)
            records = []
            for lineno, row in enumerate(csv.reader(f), start=2):
                try:
                    records.append(
                        cls._parse_row(row, joint_counts, sphere_meta, n_arms)
                    )
                except (StopIteration, ValueError) as err:
                    raise SceneError(f"malformed trajectory row at line {lineno}: {err}") from err
        return cls(header=header, records=records)

    @staticmethod
    def _parse_row(row, joint_counts, sphere_meta, n_arms) -> "TickRecord":
        it = iter(row)
        tick = int(next(it))
        t = float(next(it))
        configs = [np.array([float(next(it)) for _ in range(nj)]) for nj in joint_counts]
        spheres = []
        for meta in sphere_meta:
            x, y, z, r, vx, vy, vz = [float(next(it)) for _ in range(7)]
            spheres.append(
                Sphere((x, y, z), r, (vx, vy, vz), owner=meta["owner"], part=meta["part"])
            )
        min_clear = float(next(it))
        phi = float(next(it))
        psi_agg = float(next(it))
        solve_ms = float(next(it))
        margins, iters, degraded = [], [], []
        for _ in range(n_arms):
            margins.append(float(next(it)))
            iters.append(int(next(it)))
            degraded.append(bool(int(next(it))))
        poses = []
        for _ in range(n_arms):
            vals = [float(next(it)) for _ in range(7)]
            poses.append(Pose(vals[:3], vals[3:]))
        return TickRecord(tick, t, configs, poses, spheres, min_clear, phi, psi_agg,
                          solve_ms, margins, iters, degraded)


def _owners_cross(a: Sphere, b: Sphere, obstacle_ids) -> bool:
    """Pairs that matter: different owners, and not obstacle-obstacle."""
    if a.owner == b.owner:
        return False
    return not (a.owner in obstacle_ids and b.owner in obstacle_ids)


def _min_clearance(spheres, obstacle_ids) -> float:
    best = math.inf
    for i in range(len(spheres)):
        for j in range(i + 1, len(spheres)):
            if _owners_cross(spheres[i], spheres[j], obstacle_ids):
                a, b = spheres[i], spheres[j]
                c = float(np.linalg.norm(a.center - b.center)) - (a.radius + b.radius)
                best = min(best, c)
    return best


# ---- simulation -----------------------------------------------------------------


def _columns_for(scene: Scene, sphere_meta) -> list:
    cols = ["tick", "time"]
    for i, m in enumerate(scene.manipulators):
        cols.extend(f"m{i}_j{k}" for k in range(m.chain.n))
    for idx in range(len(sphere_meta)):
        cols.extend(f"s{idx}_{f}" for f in ("x", "y", "z", "r", "vx", "vy", "vz"))
    cols.extend(("min_clearance", "phi", "psi_agg", "solve_ms"))
    for i in range(len(scene.manipulators)):
        cols.extend((f"m{i}_min_margin", f"m{i}_pso_iters", f"m{i}_degraded"))
    for i in range(len(scene.manipulators)):
        cols.extend(f"m{i}_ee_{f}" for f in ("x", "y", "z", "qw", "qx", "qy", "qz"))
    return cols


def run(scene: Scene) -> TrajectoryLog:
    """Simulate the scene and return the trajectory log.

    Raises InitialCollision when the scene starts interpenetrating. Per-tick
    planner degradations are recorded in the log, not raised.
    """
    dt = scene.sim.dt
    obstacle_ids = frozenset(o.obstacle_id for o in scene.obstacles)
    configs = [m.initial_config.copy() for m in scene.manipulators]
    prev = [c.copy() for c in configs]

    arm_spheres0 = [
        decompose_chain(m.chain, configs[i], None, dt, m.base_pose)
        for i, m in enumerate(scene.manipulators)
    ]
    initial = [s for group in arm_spheres0 for s in group] + [
        o.sphere(0.0, dt) for o in scene.obstacles
    ]
    if _min_clearance(initial, obstacle_ids) <= 0.0:
        raise InitialCollision(f"scene '{scene.name}' starts in collision")

    sphere_meta = [{"owner": s.owner, "part": s.part} for s in initial]
    header = scene.effective_header()
    header.update(
        {
            "format": "cfik-trajectory-v1",
            "columns": _columns_for(scene, sphere_meta),
            "joint_counts": [m.chain.n for m in scene.manipulators],
            "arm_names": [m.chain.name for m in scene.manipulators],
            "spheres": sphere_meta,
            "ticks": scene.sim.n_ticks,
            "velocity_note": (
                "arm sphere velocities are finite differences of the executed step; "
                "obstacle velocities are the script velocities used for planning"
            ),
        }
    )

    planner = Planner(swarm=scene.swarm, ik=scene.ik, mode=scene.mode)
    records = []
    for k in range(scene.sim.n_ticks):
        t = k * dt
        obstacles = [o.sphere(t, dt) for o in scene.obstacles]
        arms = [
            ArmState(
                chain=m.chain,
                config=configs[i],
                prev_config=prev[i],
                target=m.target_at(t + dt),
                base_pose=m.base_pose,
            )
            for i, m in enumerate(scene.manipulators)
        ]
        req = PlanRequest(
            arms=arms, obstacles=obstacles, dt=dt, swarm=scene.swarm, ik=scene.ik, mode=scene.mode
        )
        result = planner.plan(req)

        new_configs = result.configs
        spheres = []
        poses = []
        for i, m in enumerate(scene.manipulators):
            own = decompose_chain(m.chain, new_configs[i], configs[i], dt, m.base_pose)
            spheres.extend(own)
            pose = forward_kinematics(m.chain, new_configs[i])
            poses.append(m.base_pose.compose(pose) if m.base_pose is not None else pose)
        spheres.extend(obstacles)

        records.append(
            TickRecord(
                tick=k,
                time=t,
                configs=[c.copy() for c in new_configs],
                poses=poses,
                spheres=spheres,
                min_clearance=_min_clearance(spheres, obstacle_ids),
                phi=sum(r.phi for r in result.reports),
                psi_agg=sum(r.psi_agg for r in result.reports),
                solve_ms=result.solve_ms,
                arm_min_margin=[r.min_margin for r in result.reports],
                arm_pso_iters=[r.pso_iterations for r in result.reports],
                arm_degraded=[r.degraded for r in result.reports],
            )
        )
        prev = configs
        configs = [c.copy() for c in new_configs]

    return TrajectoryLog(header=header, records=records)


# ---- oracle ---------------------------------------------------------------------


@dataclass
class OracleReport:
    clean: bool
    min_clearance: float  # over discrete tick states
    min_continuous_clearance: float  # over linear motion between ticks
    violations: list  # (tick, pair, clearance)
    first_violation: tuple | None


def _segment_min_distance(p0, p1, q0, q1) -> float:
    """Min distance between two points moving linearly over one interval."""
    d0 = p0 - q0
    dd = (p1 - p0) - (q1 - q0)
    a = float(dd @ dd)
    if a < 1e-18:
        return float(np.linalg.norm(d0))
    u = min(max(-float(d0 @ dd) / a, 0.0), 1.0)
    return float(np.linalg.norm(d0 + u * dd))


def oracle_check(log: TrajectoryLog) -> OracleReport:
    """Independent re-validation of a trajectory log.

    Discrete: every cross-owner pair keeps positive clearance at every tick.
    Continuous: between consecutive ticks each pair moves at constant velocity
    from its logged position to the next; the quadratic closest-approach test
    flags contacts that happen strictly between ticks.
    """
    arm_names = set(log.header["arm_names"])
    obstacle_ids = frozenset(
        m["owner"] for m in log.header["spheres"] if m["owner"] not in arm_names
    )
    min_disc = math.inf
    min_cont = math.inf
    violations = []
    for rec in log.records:
        sp = rec.spheres
        for i in range(len(sp)):
            for j in range(i + 1, len(sp)):
                if not _owners_cross(sp[i], sp[j], obstacle_ids):
                    continue
                c = float(np.linalg.norm(sp[i].center - sp[j].center)) - (sp[i].radius + sp[j].radius)
                min_disc = min(min_disc, c)
                if c <= 0.0:
                    violations.append((rec.tick, (sp[i].tag, sp[j].tag), c))
    for prev_rec, rec in zip(log.records, log.records[1:]):
        a, b = prev_rec.spheres, rec.spheres
        for i in range(len(a)):
            for j in range(i + 1, len(a)):
                if not _owners_cross(a[i], a[j], obstacle_ids):
                    continue
                dist = _segment_min_distance(a[i].center, b[i].center, a[j].center, b[j].center)
                c = dist - (a[i].radius + a[j].radius)
                min_cont = min(min_cont, c)
                if c <= 0.0:
                    violations.append((rec.tick, (a[i].tag, a[j].tag), c))
    violations.sort(key=lambda v: v[0])
    return OracleReport(
        clean=not violations,
        min_clearance=min_disc,
        min_continuous_clearance=min_cont,
        violations=violations,
        first_violation=violations[0] if violations else None,
    )


# ---- benchmark ------------------------------------------------------------------


@dataclass
class BenchReport:
    scene: str
    dof: int
    spheres: int
    tau: float
    N: int
    T: int
    repetitions: int
    ticks: int
    median_ms: float
    p95_ms: float

    def row(self) -> list:
        return [
            self.scene,
            self.dof,
            self.spheres,
            self.tau,
            self.T,
            self.N,
            self.repetitions,
            self.ticks,
            f"{self.median_ms:.3f}",
            f"{self.p95_ms:.3f}",
        ]

    @staticmethod
    def csv_header() -> list:
        return ["scene", "dof", "spheres", "tau", "T", "N", "repetitions", "ticks", "median_ms", "p95_ms"]


def benchmark(scene: Scene, repetitions: int = 1) -> BenchReport:
    """Median and p95 per-tick planner wall time over whole-scene repetitions."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples = []
    for _ in range(repetitions):
        log = run(scene)
        samples.extend(rec.solve_ms for rec in log.records)
    dof = sum(m.chain.n for m in scene.manipulators)
    spheres = sum(sum(segment_sphere_counts(m.chain)) for m in scene.manipulators)
    arr = np.asarray(samples) if samples else np.asarray([0.0])
    return BenchReport(
        scene=scene.name,
        dof=dof,
        spheres=spheres,
        tau=scene.sim.tau,
        N=scene.swarm.num_particles,
        T=scene.swarm.max_iterations,
        repetitions=repetitions,
        ticks=scene.sim.n_ticks,
        median_ms=float(np.median(arr)),
        p95_ms=float(np.percentile(arr, 95)),
    )
