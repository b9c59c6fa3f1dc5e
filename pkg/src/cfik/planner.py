"""Per-tick collision-aware IK planning for one or more arms.

Each arm is planned in declared order. The current configuration seeds a
racing IK solve; the solution's spheres are scored against every neighboring
sphere (obstacles plus the other arms). If any margin is non-positive the
particle swarm searches alternative seeds, and the best seed is solved once
more. Arms planned earlier in the tick expose their updated sphere velocities
to the arms planned after them; a final verification pass re-checks every
arm-arm pair at the applied velocities and holds arms (previous configuration,
zero velocity) until no cross-arm violation remains, so a non-degraded result
always carries a full horizon of predicted clearance.

When no safe configuration is found, the arm holds its previous configuration
and the report is flagged degraded, carrying the least-penalty candidate for
inspection.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .chain import KinematicChain
from .geometry import Pose
from .ik import IkError, IkParams
from .pso import (
    FitnessContext,
    FitnessResult,
    SwarmConfig,
    init_swarm,
    pso_step,
    score_margins,
    should_terminate,
    swarm_fitness,
)
from .rvo import decompose_chain, margin_field


@dataclass
class ArmState:
    chain: KinematicChain
    config: np.ndarray
    target: Pose  # world frame
    prev_config: np.ndarray | None = None
    base_pose: Pose | None = None

    def __post_init__(self):
        self.config = self.chain.check_config(self.config)
        if self.prev_config is None:
            self.prev_config = self.config.copy()
        else:
            self.prev_config = self.chain.check_config(self.prev_config)


@dataclass
class PlanRequest:
    arms: list
    obstacles: list  # Sphere list at the current tick, world frame
    dt: float
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    ik: IkParams = field(default_factory=IkParams)
    mode: str = "sequential"  # or "simultaneous"

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.mode not in ("sequential", "simultaneous"):
            raise ValueError(f"unknown planning mode '{self.mode}'")
        names = [a.chain.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ValueError("arm chain names must be unique within a request")


@dataclass
class ArmReport:
    config: np.ndarray
    degraded: bool = False
    reason: str | None = None  # ik_failure | no_safe_solution | cross_verification
    error: IkError | None = None
    phi: float = 0.0
    penalty: float = 0.0
    psi_agg: float = 0.0
    deviation: float = 0.0
    min_margin: float = math.inf
    pso_iterations: int = 0
    ik_calls: int = 0
    residual: tuple = (math.nan, math.nan)
    solver_tag: str = ""
    best_candidate: np.ndarray | None = None
    penalty_trace: list = field(default_factory=list)
    psi_trace: list = field(default_factory=list)


@dataclass
class PlanResult:
    configs: list
    reports: list
    solve_ms: float = 0.0

    @property
    def degraded(self) -> bool:
        return any(r.degraded for r in self.reports)


def _score(own, others, cfg: SwarmConfig, shared_owners) -> tuple:
    """(penalty, psi_agg, min_margin) of a sphere set against its neighbors."""
    return score_margins(own, others, cfg, shared_owners)


class Planner:
    """Plans one scene; owns the swarm RNG stream for reproducible runs."""

    def __init__(self, swarm: SwarmConfig | None = None, ik: IkParams | None = None, mode: str = "sequential"):
        self.swarm = swarm if swarm is not None else SwarmConfig()
        self.ik = ik if ik is not None else IkParams()
        self.mode = mode
        self.rng = np.random.default_rng(self.swarm.rng_seed)

    def plan(self, request: PlanRequest) -> PlanResult:
        t0 = time.perf_counter()
        arms = request.arms
        cfg = request.swarm
        planned = [a.config.copy() for a in arms]
        reports: list = [None] * len(arms)
        held = [False] * len(arms)

        # Sphere sets are pure functions of (config, previous config), so each
        # arm is decomposed once per tick for its incoming motion and once
        # more for its planned motion, instead of per consumer.
        multi = len(arms) > 1
        current_sets = (
            [
                decompose_chain(a.chain, a.config, a.prev_config, request.dt, a.base_pose)
                for a in arms
            ]
            if multi
            else []
        )
        planned_sets: list = [None] * len(arms)

        for i, arm in enumerate(arms):
            others = list(request.obstacles)
            for j in range(len(arms)):
                if j == i:
                    continue
                if request.mode == "sequential" and j < i:
                    others += planned_sets[j]
                else:
                    others += current_sets[j]
            reports[i] = self._plan_arm(arm, others, request, cfg)
            planned[i] = reports[i].config
            held[i] = reports[i].degraded
            if multi:
                planned_sets[i] = decompose_chain(
                    arm.chain, planned[i], arm.config, request.dt, arm.base_pose
                )

        self._cross_verify(arms, planned, planned_sets, reports, held, request, cfg)

        result = PlanResult(configs=planned, reports=reports)
        result.solve_ms = (time.perf_counter() - t0) * 1e3
        return result

    # ---- single arm ---------------------------------------------------------

    def _plan_arm(self, arm: ArmState, others, request: PlanRequest, cfg: SwarmConfig) -> ArmReport:
        chain = arm.chain
        base = arm.base_pose
        target_local = arm.target if base is None else base.inverse().compose(arm.target)
        shared = frozenset(a.chain.name for a in request.arms if a.chain.name != chain.name)
        calls = 0

        def solve(seed):
            nonlocal calls
            calls += 1
            return request.ik.solve(chain, target_local, seed)

        try:
            sol = solve(arm.config)
        except IkError as err:
            return ArmReport(
                config=arm.config.copy(),
                degraded=True,
                reason="ik_failure",
                error=err,
                ik_calls=calls,
            )

        own = decompose_chain(chain, sol.config, arm.config, request.dt, base)
        penalty, psi_agg, min_margin = _score(own, others, cfg, shared)
        weights = cfg.weights_for(chain.n)
        deviation = float(weights @ np.abs(sol.config - arm.config))
        if min_margin > 0.0 or not others:
            return ArmReport(
                config=sol.config,
                phi=cfg.collision_weight * penalty + cfg.deviation_weight * deviation,
                penalty=penalty,
                psi_agg=psi_agg,
                deviation=deviation,
                min_margin=min_margin,
                ik_calls=calls,
                residual=sol.residual,
                solver_tag=sol.solver_tag,
            )

        # collision threatened: swarm over seeds
        ctx = FitnessContext(
            chain=chain,
            target=target_local,
            current_config=arm.config,
            others=others,
            dt=request.dt,
            ik=request.ik,
            base_pose=base,
            shared_owners=shared,
        )

        def fitness(pos):
            nonlocal calls
            calls += 1
            return swarm_fitness(pos, ctx, cfg)

        state = init_swarm(chain, arm.config, cfg, fitness, rng=self.rng)
        while not should_terminate(state, cfg):
            state = pso_step(state, chain, cfg, fitness)

        best: FitnessResult = state.global_best_payload
        if best.config is None:
            return ArmReport(
                config=arm.config.copy(),
                degraded=True,
                reason="ik_failure",
                error=IkError("no particle produced a valid IK solution"),
                pso_iterations=state.iteration,
                ik_calls=calls,
                penalty_trace=list(state.penalty_trace),
                psi_trace=list(state.psi_trace),
            )

        try:
            final = solve(state.global_best_position)
        except IkError as err:
            return ArmReport(
                config=arm.config.copy(),
                degraded=True,
                reason="ik_failure",
                error=err,
                pso_iterations=state.iteration,
                ik_calls=calls,
                best_candidate=best.config,
                penalty_trace=list(state.penalty_trace),
                psi_trace=list(state.psi_trace),
            )

        own = decompose_chain(chain, final.config, arm.config, request.dt, base)
        penalty, psi_agg, min_margin = _score(own, others, cfg, shared)
        deviation = float(weights @ np.abs(final.config - arm.config))
        phi = cfg.collision_weight * penalty + cfg.deviation_weight * deviation
        if min_margin > 0.0:
            return ArmReport(
                config=final.config,
                phi=phi,
                penalty=penalty,
                psi_agg=psi_agg,
                deviation=deviation,
                min_margin=min_margin,
                pso_iterations=state.iteration,
                ik_calls=calls,
                residual=final.residual,
                solver_tag=final.solver_tag,
                penalty_trace=list(state.penalty_trace),
                psi_trace=list(state.psi_trace),
            )
        return ArmReport(
            config=arm.config.copy(),
            degraded=True,
            reason="no_safe_solution",
            phi=phi,
            penalty=penalty,
            psi_agg=psi_agg,
            deviation=deviation,
            min_margin=min_margin,
            pso_iterations=state.iteration,
            ik_calls=calls,
            residual=final.residual,
            solver_tag=final.solver_tag,
            best_candidate=final.config,
            penalty_trace=list(state.penalty_trace),
            psi_trace=list(state.psi_trace),
        )

    # ---- post-plan verification ---------------------------------------------

    def _cross_verify(self, arms, planned, sets, reports, held, request, cfg: SwarmConfig):
        """Re-check arm-arm pairs at the applied velocities; hold violators.

        Sequentially planned arms never saw the motion of arms planned after
        them, so the pairwise margins are re-evaluated here over the planned
        sphere sets. A violating pair holds its moving (or later-planned) arm
        at the previous configuration and the scan repeats; held arms are
        stationary, so the loop reaches a violation-free fixpoint in at most
        one pass per arm.
        """
        if len(arms) < 2:
            return
        for _ in range(len(arms) + 1):
            offender = None
            for i in range(len(arms)):
                for j in range(i + 1, len(arms)):
                    margins, kept = margin_field(sets[i], sets[j], cfg.horizon)
                    if bool((margins[kept] <= 0.0).any()):
                        offender = i if held[j] and not held[i] else j
                        break
                if offender is not None:
                    break
            if offender is None:
                return
            planned[offender] = arms[offender].config.copy()
            rep = reports[offender]
            rep.config = planned[offender]
            rep.degraded = True
            rep.reason = rep.reason or "cross_verification"
            held[offender] = True
            a = arms[offender]
            sets[offender] = decompose_chain(a.chain, planned[offender], a.config, request.dt, a.base_pose)


def generate_ik_solution(request: PlanRequest) -> PlanResult:
    """One-shot planning entry point with a fresh deterministic RNG."""
    planner = Planner(swarm=request.swarm, ik=request.ik, mode=request.mode)
    return planner.plan(request)
