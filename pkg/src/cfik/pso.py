"""Particle swarm search over IK seeds.

Particles live in joint space, bounded by the joint limits. A particle's
fitness is obtained by solving IK from the particle (seed), decomposing the
solution into spheres, and scoring

    phi = collision_weight * sum_m max(0, -margin_m) + deviation_weight * E

where margin_m is the signed velocity-obstacle clearance of sphere pair m and
E = sum_i w_i |theta_i - theta_i^current| penalizes leaving the current
configuration. The raw sum of margins is kept alongside for diagnostics.

The swarm is synchronous: every particle is evaluated, then personal and
global bests are reduced in particle-index order, so results are independent
of any evaluation parallelism. All randomness comes from one seeded generator
carried in the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import KinematicChain
from .geometry import Pose
from .ik import IkError, IkParams
from .rvo import Sphere, decompose_chain, margin_field


@dataclass
class SwarmConfig:
    num_particles: int = 2  # N
    max_iterations: int = 2  # T
    cognitive: float = 2.0  # c1
    social: float = 2.0  # c2
    collision_weight: float = 10.0  # alpha
    deviation_weight: float = 1.0  # beta
    joint_weights: np.ndarray | None = None  # per-joint lambda, ones when omitted
    horizon: float = 5.0  # tau, seconds
    rng_seed: int = 0
    inertia: float = 1.0
    velocity_clamp: float = 0.25  # fraction of each joint's range
    reciprocity: float = 0.5  # share of avoidance effort against other planned arms

    def __post_init__(self):
        if self.num_particles < 1 or self.max_iterations < 1:
            raise ValueError("swarm needs at least one particle and one iteration")
        if self.cognitive < 0.0 or self.social < 0.0:
            raise ValueError("acceleration coefficients must be non-negative")
        if self.collision_weight <= 0.0 or self.deviation_weight < 0.0:
            raise ValueError("collision_weight must be positive, deviation_weight non-negative")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if not 0.0 < self.reciprocity <= 1.0:
            raise ValueError("reciprocity must be in (0, 1]")
        if self.joint_weights is not None:
            self.joint_weights = np.asarray(self.joint_weights, dtype=float).reshape(-1)
            if np.any(self.joint_weights < 0.0):
                raise ValueError("joint weights must be non-negative")

    def weights_for(self, n: int) -> np.ndarray:
        if self.joint_weights is None:
            return np.ones(n)
        if self.joint_weights.size != n:
            raise ValueError(f"{self.joint_weights.size} joint weights for a {n}-joint chain")
        return self.joint_weights


@dataclass
class FitnessResult:
    phi: float
    penalty: float  # sum of weighted constraint violations, the collision part of phi
    psi_agg: float  # raw sum of signed margins over evaluated pairs
    deviation: float  # E, weighted L1 distance from the current configuration
    min_margin: float
    config: np.ndarray | None  # IK solution behind this score, None if IK failed


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float
    best_payload: FitnessResult


@dataclass
class SwarmState:
    particles: list
    iteration: int
    global_best_position: np.ndarray
    global_best_fitness: float
    global_best_payload: FitnessResult
    rng: np.random.Generator
    penalty_trace: list = field(default_factory=list)
    psi_trace: list = field(default_factory=list)

    def record_trace(self):
        self.penalty_trace.append(self.global_best_payload.penalty)
        self.psi_trace.append(self.global_best_payload.psi_agg)


@dataclass
class FitnessContext:
    """Frozen scene snapshot a particle is scored against."""

    chain: KinematicChain
    target: Pose  # chain-local target pose
    current_config: np.ndarray
    others: list  # Sphere obstacles and other arms' spheres, world frame
    dt: float
    ik: IkParams
    base_pose: Pose | None = None
    shared_owners: frozenset = frozenset()  # owners that also run this planner


def score_margins(own: list, others: list, cfg: SwarmConfig, shared_owners) -> tuple:
    """(penalty, psi_agg, min_margin) of a sphere set against its neighbors.

    Pairs outside the neighbor cut are skipped; violations against spheres
    whose owner also runs this planner count at the reciprocity share, since
    that arm is expected to yield the complementary share.
    """
    if not own or not others:
        return 0.0, 0.0, math.inf
    margins, kept = margin_field(own, others, cfg.horizon)
    if not kept.any():
        return 0.0, 0.0, math.inf
    w = np.array([cfg.reciprocity if o.owner in shared_owners else 1.0 for o in others])
    m = margins[kept]
    penalty = np.broadcast_to(w, margins.shape)[kept] @ np.maximum(0.0, -m)
    return float(penalty), float(m.sum()), float(m.min())


def swarm_fitness(theta, context: FitnessContext, cfg: SwarmConfig) -> FitnessResult:
    """Score one seed: IK, sphere decomposition, velocity-obstacle margins."""
    chain = context.chain
    try:
        sol = context.ik.solve(chain, context.target, theta)
    except IkError:
        return FitnessResult(math.inf, math.inf, math.nan, math.nan, math.nan, None)
    own = decompose_chain(chain, sol.config, context.current_config, context.dt, context.base_pose)
    penalty, psi_agg, min_margin = score_margins(own, context.others, cfg, context.shared_owners)
    weights = cfg.weights_for(chain.n)
    deviation = float(weights @ np.abs(sol.config - context.current_config))
    phi = cfg.collision_weight * penalty + cfg.deviation_weight * deviation
    return FitnessResult(phi, penalty, psi_agg, deviation, min_margin, sol.config)


def _reduce_global(state: SwarmState):
    """Pick the global best from personal bests in particle-index order."""
    for p in state.particles:
        if p.best_fitness < state.global_best_fitness:
            state.global_best_fitness = p.best_fitness
            state.global_best_position = p.best_position.copy()
            state.global_best_payload = p.best_payload


def init_swarm(
    chain: KinematicChain,
    current_config,
    cfg: SwarmConfig,
    fitness_fn,
    rng: np.random.Generator | None = None,
) -> SwarmState:
    """Build and evaluate the initial swarm.

    Particle 0 warm-starts at the current configuration; the rest are uniform
    inside the joint limits with zero velocity. The initial evaluation counts
    as iteration 1 of the swarm's budget.
    """
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    current = chain.clamp(current_config)
    particles = []
    for i in range(cfg.num_particles):
        pos = current.copy() if i == 0 else rng.uniform(chain.lower, chain.upper)
        payload = fitness_fn(pos)
        particles.append(
            Particle(
                position=pos,
                velocity=np.zeros(chain.n),
                best_position=pos.copy(),
                best_fitness=payload.phi,
                best_payload=payload,
            )
        )
    state = SwarmState(
        particles=particles,
        iteration=1,
        global_best_position=particles[0].best_position.copy(),
        global_best_fitness=particles[0].best_fitness,
        global_best_payload=particles[0].best_payload,
        rng=rng,
    )
    _reduce_global(state)
    state.record_trace()
    return state


def pso_step(state: SwarmState, chain: KinematicChain, cfg: SwarmConfig, fitness_fn) -> SwarmState:
    """One synchronous swarm update: move every particle, then re-evaluate.

    v <- inertia * v + c1 r1 (p - x) + c2 r2 (g - x), with r1, r2 drawn per
    particle per iteration; velocities are clamped per joint to
    velocity_clamp * range and positions to the joint limits.
    """
    v_cap = cfg.velocity_clamp * (chain.upper - chain.lower)
    for p in state.particles:
        r1, r2 = state.rng.uniform(0.0, 1.0, size=2)
        p.velocity = (
            cfg.inertia * p.velocity
            + cfg.cognitive * r1 * (p.best_position - p.position)
            + cfg.social * r2 * (state.global_best_position - p.position)
        )
        p.velocity = np.clip(p.velocity, -v_cap, v_cap)
        p.position = np.clip(p.position + p.velocity, chain.lower, chain.upper)
    for p in state.particles:
        payload = fitness_fn(p.position)
        if payload.phi < p.best_fitness:
            p.best_fitness = payload.phi
            p.best_position = p.position.copy()
            p.best_payload = payload
    _reduce_global(state)
    state.iteration += 1
    state.record_trace()
    return state


def should_terminate(state: SwarmState, cfg: SwarmConfig) -> bool:
    """Stop at the iteration budget or as soon as the best particle is violation-free."""
    return state.iteration >= cfg.max_iterations or state.global_best_payload.penalty == 0.0
