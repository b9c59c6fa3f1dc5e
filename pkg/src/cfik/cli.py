"""Command-line front end.

Subcommands: validate (parse and echo a scene), solve (one planner tick),
simulate (run a scene and write a trajectory log), check (re-verify a log
with the collision oracle), bench (per-tick timing table).

Exit codes are a stable contract: 0 success, 1 input or solver error,
2 degraded solution, 3 verification failure. Standard out carries only
machine-parseable JSON or CSV; prose goes to standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from .geometry import Pose
from .ik import ORI_FREE, IkError, RacingFailure
from .planner import ArmState, Planner, PlanRequest
from .simulator import (
    BenchReport,
    SCENE_DIR_ENV,
    SceneError,
    TrajectoryLog,
    benchmark,
    load_scene,
    oracle_check,
    run,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEGRADED = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; 2 means degraded here, so remap to 1."""

    def error(self, message):
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0.0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {value}")
    return value


def build_parser() -> _Parser:
    parser = _Parser(
        prog="cfik",
        description=(
            "Collision-free inverse kinematics for multiple arms among moving "
            f"obstacles. Scenes resolve against ${SCENE_DIR_ENV} and the bundled set."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--rng-seed", type=int, default=None, help="override the scene RNG seed")
    common.add_argument("--dt", type=_positive_float, default=None, help="override the timestep [s]")
    common.add_argument("--tau", type=_positive_float, default=None, help="override the time horizon [s]")
    common.add_argument("--swarm-n", type=_positive_int, default=None, help="override particle count N")
    common.add_argument("--swarm-t", type=_positive_int, default=None, help="override swarm iterations T")
    common.add_argument("--duration", type=_nonneg_float, default=None, help="override the duration [s]")
    common.add_argument("-v", "--verbose", action="count", default=0)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="parse a scene and echo its effective config")
    p.add_argument("scene")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", parents=[common], help="one planner tick against a scene")
    p.add_argument("scene")
    p.add_argument("--arm", default=None, help="manipulator name (default: first in scene)")
    p.add_argument("--pos", type=float, nargs=3, metavar=("X", "Y", "Z"), default=None,
                   help="world target position for --arm (default: scene waypoint)")
    p.add_argument("--rpy", type=float, nargs=3, metavar=("R", "P", "Y"), default=None,
                   help="world target orientation as roll pitch yaw")
    p.add_argument("--quat", type=float, nargs=4, metavar=("W", "X", "Y", "Z"), default=None,
                   help="world target orientation as a quaternion")
    p.add_argument("--position-only", action="store_true", help="leave orientation free")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", parents=[common], help="run a scene and write the trajectory log")
    p.add_argument("scene")
    p.add_argument("--out", required=True, help="trajectory log output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", parents=[common], help="re-verify a trajectory log")
    p.add_argument("log")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", parents=[common], help="per-tick planner timing table (CSV)")
    p.add_argument("scenes", nargs="+")
    p.add_argument("--reps", type=_positive_int, default=1, help="whole-scene repetitions")
    p.set_defaults(func=cmd_bench)

    return parser


def _apply_overrides(scene, args):
    sim, swarm = scene.sim, scene.swarm
    if args.dt is not None:
        sim = replace(sim, dt=args.dt)
    if args.duration is not None:
        sim = replace(sim, duration=args.duration)
    if args.tau is not None:
        sim = replace(sim, tau=args.tau)
        swarm = replace(swarm, horizon=args.tau)
    if args.rng_seed is not None:
        swarm = replace(swarm, rng_seed=args.rng_seed)
    if args.swarm_n is not None:
        swarm = replace(swarm, num_particles=args.swarm_n)
    if args.swarm_t is not None:
        swarm = replace(swarm, max_iterations=args.swarm_t)
    scene.sim = sim
    scene.swarm = swarm
    return scene


def _error_name(err: Exception) -> str:
    if isinstance(err, RacingFailure):
        kinds = [type(v).__name__ for v in err.causes.values()]
        if "UnreachableTarget" in kinds:
            return "UnreachableTarget"
        if kinds and all(k == kinds[0] for k in kinds):
            return kinds[0]
    return type(err).__name__


def cmd_validate(args) -> int:
    scene = _apply_overrides(load_scene(args.scene), args)
    out = {
        "valid": True,
        "effective": scene.effective_header(),
        "manipulators": [
            {"name": m.chain.name, "dof": m.chain.n, "waypoints": len(m.waypoints)}
            for m in scene.manipulators
        ],
        "obstacles": [
            {"id": o.obstacle_id, "kind": o.kind, "radius": o.radius} for o in scene.obstacles
        ],
        "ticks": scene.sim.n_ticks,
    }
    print(json.dumps(out))
    return EXIT_OK


def _solve_target(args, manip, dt) -> Pose:
    if args.pos is None:
        return manip.target_at(dt)
    if args.quat is not None:
        return Pose(np.asarray(args.pos), np.asarray(args.quat))
    if args.rpy is not None:
        return Pose.from_pos_rpy(args.pos, args.rpy)
    return Pose.from_pos_rpy(args.pos, (0.0, 0.0, 0.0))


def cmd_solve(args) -> int:
    scene = _apply_overrides(load_scene(args.scene), args)
    if not scene.manipulators:
        raise SceneError("scene has no manipulators to solve for")
    names = [m.chain.name for m in scene.manipulators]
    if args.arm is None:
        arm_idx = 0
    elif args.arm in names:
        arm_idx = names.index(args.arm)
    else:
        raise SceneError(f"no manipulator named '{args.arm}' (have {names})")

    dt = scene.sim.dt
    ik = scene.ik
    if args.position_only:
        ik = replace(ik, ori_tol=ORI_FREE)
    arms = []
    for i, m in enumerate(scene.manipulators):
        target = _solve_target(args, m, dt) if i == arm_idx else m.target_at(dt)
        arms.append(
            ArmState(chain=m.chain, config=m.initial_config, target=target, base_pose=m.base_pose)
        )
    obstacles = [o.sphere(0.0, dt) for o in scene.obstacles]
    planner = Planner(swarm=scene.swarm, ik=ik, mode=scene.mode)
    result = planner.plan(
        PlanRequest(arms=arms, obstacles=obstacles, dt=dt, swarm=scene.swarm, ik=ik, mode=scene.mode)
    )

    failed = [r for r in result.reports if r.degraded and r.reason == "ik_failure"]
    if failed:
        err = failed[0].error
        print(json.dumps({"error": _error_name(err), "message": str(err)}))
        print(f"cfik solve: ik failed: {err}", file=sys.stderr)
        return EXIT_ERROR

    out = {
        "effective": scene.effective_header(),
        "solve_ms": result.solve_ms,
        "arms": [
            {
                "name": names[i],
                "config": [float(v) for v in r.config],
                "residual": {"pos": r.residual[0], "ori": r.residual[1]},
                "solver": r.solver_tag,
                "phi": r.phi,
                "penalty": r.penalty,
                "psi_agg": r.psi_agg,
                "min_margin": r.min_margin,
                "pso_iterations": r.pso_iterations,
                "ik_calls": r.ik_calls,
                "degraded": r.degraded,
                "reason": r.reason,
            }
            for i, r in enumerate(result.reports)
        ],
    }
    print(json.dumps(out))
    if result.degraded:
        print("cfik solve: degraded (held previous configuration)", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_simulate(args) -> int:
    scene = _apply_overrides(load_scene(args.scene), args)
    if args.verbose:
        print(f"cfik simulate: {scene.name}, {scene.sim.n_ticks} ticks", file=sys.stderr)
    log = run(scene)
    log.write(args.out)
    report = oracle_check(log)
    degraded_ticks = sum(1 for rec in log.records if any(rec.arm_degraded))
    out = {
        "scene": scene.name,
        "out": str(args.out),
        "ticks": len(log.records),
        "clean": report.clean,
        "min_clearance": report.min_clearance,
        "min_continuous_clearance": report.min_continuous_clearance,
        "degraded_ticks": degraded_ticks,
        "effective": scene.effective_header(),
    }
    print(json.dumps(out))
    if not report.clean:
        first = report.first_violation
        print(f"cfik simulate: oracle violation at tick {first[0]} {first[1]}", file=sys.stderr)
        return EXIT_VERIFY
    if degraded_ticks:
        print(f"cfik simulate: {degraded_ticks} degraded ticks", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_check(args) -> int:
    log = TrajectoryLog.read(args.log)
    report = oracle_check(log)
    first = None
    if report.first_violation is not None:
        tick, pair, clearance = report.first_violation
        first = {"tick": tick, "pair": list(pair), "clearance": clearance}
    out = {
        "clean": report.clean,
        "min_clearance": report.min_clearance,
        "min_continuous_clearance": report.min_continuous_clearance,
        "n_violations": len(report.violations),
        "first_violation": first,
        "config": {
            k: log.header.get(k)
            for k in ("scene", "dt", "duration", "tau", "mode", "pso", "ik", "ticks")
        },
    }
    print(json.dumps(out))
    if not report.clean:
        print(f"cfik check: first violation at tick {first['tick']}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_bench(args) -> int:
    writer = csv.writer(sys.stdout)
    writer.writerow(BenchReport.csv_header())
    for path in args.scenes:
        scene = _apply_overrides(load_scene(path), args)
        if args.verbose:
            print(f"cfik bench: {scene.name} x{args.reps}", file=sys.stderr)
        writer.writerow(benchmark(scene, args.reps).row())
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SceneError, IkError, OSError, ValueError, KeyError) as err:
        print(json.dumps({"error": _error_name(err), "message": str(err)}))
        print(f"cfik {args.command}: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
