"""Inverse kinematics solvers.

Two complementary solvers are raced against each other:

* ``solve_jacobian_ik``: damped-Newton iteration on the 6-vector Cartesian
  error, theta <- theta + pinv(J) @ err, clamped to joint limits.
* ``solve_sqp_ik``: sequential quadratic steps on the seed-proximal program
  min ||theta - seed||^2 subject to the pose error staying inside the request
  tolerances and theta inside the joint limits. Steps combine the Newton
  direction with a null-space pull toward the seed and are accepted through a
  backtracking line search on an l1 merit function.

``solve_racing_ik`` runs both under a shared budget and returns the first
success. In deterministic mode they run sequentially with halved budgets,
which is bit-reproducible; in parallel mode two threads race with a shared
cancellation flag.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .chain import KinematicChain, forward_kinematics, jacobian, pseudoinverse
from .geometry import Pose, rotation_log

STEP_CAP = 0.5  # max |delta theta| per joint per iteration, radians
STAGNATION_EPS = 1e-12
STAGNATION_ITERS = 10
# tolerances at or above these mean "unconstrained": no orientation error can
# exceed pi, so the corresponding error rows are dropped from the solve
ORI_FREE = np.pi
POS_FREE = 1e3


class IkError(Exception):
    """Base class for solver failures."""


class NoConvergence(IkError):
    pass


class UnreachableTarget(IkError):
    pass


class Infeasible(IkError):
    pass


class _Cancelled(IkError):
    pass


class RacingFailure(IkError):
    """Both raced solvers failed; carries each solver's cause."""

    def __init__(self, causes: dict):
        self.causes = causes
        detail = "; ".join(f"{k}: {type(v).__name__}: {v}" for k, v in causes.items())
        super().__init__(f"no solver succeeded ({detail})")


@dataclass
class IkRequest:
    target: Pose
    seed: np.ndarray
    pos_tol: float = 1e-4
    ori_tol: float = 1e-3
    max_iterations: int = 200
    time_budget: float | None = None  # seconds, enforced in parallel mode only
    rng_seed: int = 0

    def __post_init__(self):
        self.seed = np.asarray(self.seed, dtype=float).reshape(-1)
        if self.pos_tol <= 0.0 or self.ori_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class IkSolution:
    config: np.ndarray
    residual: tuple[float, float]  # (position error m, orientation error rad)
    iterations: int
    solver_tag: str


@dataclass
class IkParams:
    """Solver settings shared by the planner and the swarm fitness."""

    pos_tol: float = 1e-4
    ori_tol: float = 1e-3
    max_iterations: int = 200
    restarts: int = 0
    deterministic: bool = True
    time_budget: float | None = None

    def request(self, target: Pose, seed) -> "IkRequest":
        return IkRequest(
            target=target,
            seed=seed,
            pos_tol=self.pos_tol,
            ori_tol=self.ori_tol,
            max_iterations=self.max_iterations,
            time_budget=self.time_budget,
        )

    def solve(self, chain: KinematicChain, target: Pose, seed) -> "IkSolution":
        return solve_racing_ik(
            chain,
            self.request(target, seed),
            deterministic=self.deterministic,
            restarts=self.restarts,
        )


def pose_error(target: Pose, current: Pose) -> np.ndarray:
    """World-frame 6-vector error [position; axis-angle of relative rotation]."""
    e = np.empty(6)
    e[:3] = target.position - current.position
    e[3:] = rotation_log(target.rotation() @ current.rotation().T)
    return e


def _error_state(chain, q, req):
    pose = forward_kinematics(chain, q)
    e = pose_error(req.target, pose)
    pe = float(np.linalg.norm(e[:3]))
    oe = float(np.linalg.norm(e[3:]))
    return e, pe, oe


def _active_rows(req):
    rows = []
    if req.pos_tol < POS_FREE:
        rows.extend((0, 1, 2))
    if req.ori_tol < ORI_FREE:
        rows.extend((3, 4, 5))
    if not rows:
        raise ValueError("request constrains neither position nor orientation")
    return np.asarray(rows)


def _tracked_residual(pe, oe, req):
    # stagnation bookkeeping must ignore unconstrained components, otherwise
    # free-axis drift masks a genuine stall
    res = 0.0
    if req.pos_tol < POS_FREE:
        res += pe
    if req.ori_tol < ORI_FREE:
        res += oe
    return res


def _check(cancel):
    if cancel is not None and cancel.is_set():
        raise _Cancelled("cancelled by racing peer")


def _bounded_newton_step(chain: KinematicChain, q, J, e) -> np.ndarray:
    """Gauss-Newton step that respects active joint limits.

    Joints pinned at a bound with the step pushing further out contribute
    nothing; their columns are removed and the step recomputed so the solver
    can slide along the limit surface instead of stalling against it.
    """
    dq = pseudoinverse(J) @ e
    active = np.zeros(chain.n, dtype=bool)
    for _ in range(chain.n):
        pushing_out = ((q <= chain.lower + 1e-12) & (dq < 0.0)) | (
            (q >= chain.upper - 1e-12) & (dq > 0.0)
        )
        new = pushing_out & ~active
        if not new.any():
            break
        active |= new
        Jf = J.copy()
        Jf[:, active] = 0.0
        dq = pseudoinverse(Jf) @ e
        dq[active] = 0.0
    return dq


def solve_jacobian_ik(chain: KinematicChain, req: IkRequest, cancel=None) -> IkSolution:
    """Damped-Newton iteration on the Cartesian error.

    Raises NoConvergence when the iteration budget runs out while still
    improving, UnreachableTarget when the residual stagnates above tolerance
    (improvement < 1e-12 over 10 consecutive iterations).
    """
    rows = _active_rows(req)
    q = chain.clamp(req.seed)
    e, pe, oe = _error_state(chain, q, req)
    prev_res = _tracked_residual(pe, oe, req)
    stale = 0
    for k in range(req.max_iterations):
        if pe <= req.pos_tol and oe <= req.ori_tol:
            return IkSolution(q, (pe, oe), k, "jacobian")
        _check(cancel)
        J = jacobian(chain, q)[rows]
        dq = _bounded_newton_step(chain, q, J, e[rows])
        m = np.max(np.abs(dq))
        if m > STEP_CAP:
            dq *= STEP_CAP / m
        q = chain.clamp(q + dq)
        e, pe, oe = _error_state(chain, q, req)
        res = _tracked_residual(pe, oe, req)
        if prev_res - res < STAGNATION_EPS:
            stale += 1
            if stale >= STAGNATION_ITERS:
                raise UnreachableTarget(
                    f"residual stalled at pos={pe:.3e} m ori={oe:.3e} rad after {k + 1} iterations"
                )
        else:
            stale = 0
        prev_res = res
    if pe <= req.pos_tol and oe <= req.ori_tol:
        return IkSolution(q, (pe, oe), req.max_iterations, "jacobian")
    raise NoConvergence(f"pos={pe:.3e} m ori={oe:.3e} rad after {req.max_iterations} iterations")


def solve_sqp_ik(chain: KinematicChain, req: IkRequest, cancel=None) -> IkSolution:
    """Seed-proximal SQP: feasible pose, minimal ||theta - seed||.

    Raises Infeasible when progress stalls outside the tolerance band (no
    feasible point nearby, e.g. limits exclude the target), NoConvergence when
    the iteration budget runs out while still infeasible.
    """
    rows = _active_rows(req)
    seed = chain.clamp(req.seed)
    q = seed.copy()
    mu = 1e6  # l1 penalty weight; large enough that feasibility dominates

    def merit(pe, oe, qq):
        viol = max(0.0, pe - req.pos_tol) + max(0.0, oe - req.ori_tol)
        d = qq - seed
        return mu * viol + float(d @ d)

    e, pe, oe = _error_state(chain, q, req)
    m_cur = merit(pe, oe, q)
    stale = 0
    for k in range(req.max_iterations):
        feasible = pe <= req.pos_tol and oe <= req.ori_tol
        _check(cancel)
        J = jacobian(chain, q)[rows]
        Jp = pseudoinverse(J)
        newton = Jp @ e[rows]
        null = (seed - q) - Jp @ (J @ (seed - q))
        d = newton + null
        cap = np.max(np.abs(d))
        if cap > STEP_CAP:
            d *= STEP_CAP / cap
        if feasible and np.linalg.norm(chain.clamp(q + d) - q) < 1e-10:
            return IkSolution(q, (pe, oe), k, "sqp")
        # backtracking line search on the merit function
        step, accepted, improvement = 1.0, False, 0.0
        for _ in range(25):
            q_t = chain.clamp(q + step * d)
            e_t, pe_t, oe_t = _error_state(chain, q_t, req)
            m_t = merit(pe_t, oe_t, q_t)
            if m_t < m_cur - 1e-16:
                q, e, pe, oe = q_t, e_t, pe_t, oe_t
                improvement = m_cur - m_t
                m_cur = m_t
                accepted = True
                break
            step *= 0.5
        if not accepted and feasible:
            # cannot move without leaving the tolerance band or the limits:
            # this is the proximal optimum up to numerical precision
            return IkSolution(q, (pe, oe), k + 1, "sqp")
        stale = stale + 1 if improvement < STAGNATION_EPS else 0
        if stale >= STAGNATION_ITERS:
            if pe <= req.pos_tol and oe <= req.ori_tol:
                return IkSolution(q, (pe, oe), k + 1, "sqp")
            raise Infeasible(
                f"no feasible point near seed: pos={pe:.3e} m ori={oe:.3e} rad after {k + 1} iterations"
            )
    if pe <= req.pos_tol and oe <= req.ori_tol:
        return IkSolution(q, (pe, oe), req.max_iterations, "sqp")
    raise NoConvergence(f"pos={pe:.3e} m ori={oe:.3e} rad after {req.max_iterations} iterations")


def _halved(req, budget):
    half = max(1, budget // 2)
    return (
        _with_budget(req, half),
        _with_budget(req, max(1, budget - half)),
    )


def _with_budget(req, iters):
    return IkRequest(
        target=req.target,
        seed=req.seed,
        pos_tol=req.pos_tol,
        ori_tol=req.ori_tol,
        max_iterations=iters,
        time_budget=req.time_budget,
        rng_seed=req.rng_seed,
    )


def _race_parallel(chain, req) -> IkSolution:
    cancel = threading.Event()
    results: queue.Queue = queue.Queue()
    deadline = None if req.time_budget is None else time.perf_counter() + req.time_budget

    def work(fn, tag):
        try:
            results.put((tag, fn(chain, req, cancel=cancel)))
        except IkError as err:
            results.put((tag, err))

    threads = [
        threading.Thread(target=work, args=(solve_jacobian_ik, "jacobian"), daemon=True),
        threading.Thread(target=work, args=(solve_sqp_ik, "sqp"), daemon=True),
    ]
    for t in threads:
        t.start()
    causes = {}
    for _ in range(2):
        timeout = None if deadline is None else max(0.0, deadline - time.perf_counter())
        try:
            tag, out = results.get(timeout=timeout)
        except queue.Empty:
            cancel.set()
            raise NoConvergence(f"time budget {req.time_budget} s exhausted")
        if isinstance(out, IkSolution):
            cancel.set()
            return out
        if not isinstance(out, _Cancelled):
            causes[tag] = out
    raise RacingFailure(causes)


def solve_racing_ik(
    chain: KinematicChain,
    req: IkRequest,
    deterministic: bool = True,
    restarts: int = 0,
) -> IkSolution:
    """Race the Newton and SQP solvers; first success wins.

    Deterministic mode runs Jacobian then SQP sequentially with halved
    iteration budgets and ignores wall-clock budgets, so results are
    bit-reproducible. Optional random restarts re-seed failed attempts from
    uniform configurations inside the joint limits; the iteration budget is
    shared across all attempts so the request's ``max_iterations`` is a hard
    ceiling on total work.
    """
    if restarts < 0:
        raise ValueError("restarts must be >= 0")
    rng = np.random.default_rng(req.rng_seed)
    seeds = [np.asarray(req.seed, dtype=float)]
    seeds += [chain.random_config(rng) for _ in range(restarts)]
    remaining = req.max_iterations
    causes: dict = {}
    for attempt, seed in enumerate(seeds):
        if remaining < 1:
            break
        budget = max(1, remaining // (len(seeds) - attempt))
        sub = _with_budget(req, budget)
        sub.seed = seed
        if not deterministic:
            try:
                return _race_parallel(chain, sub)
            except RacingFailure as err:
                causes.update({f"{k}[{attempt}]": v for k, v in err.causes.items()})
            except IkError as err:
                causes[f"race[{attempt}]"] = err
            remaining -= budget
            continue
        jac_req, sqp_req = _halved(sub, budget)
        try:
            return solve_jacobian_ik(chain, jac_req)
        except IkError as err:
            causes[f"jacobian[{attempt}]"] = err
        try:
            return solve_sqp_ik(chain, sqp_req)
        except IkError as err:
            causes[f"sqp[{attempt}]"] = err
        remaining -= budget
    raise RacingFailure(causes)
