"""cfik: collision-free inverse kinematics for redundant arms in shared workspaces.

Joint-space solutions are produced by racing a damped-Newton solver against a
seed-proximal SQP solver; collision avoidance against moving spheres comes from
reciprocal velocity-obstacle constraints evaluated inside a particle swarm
search over IK seeds.
"""

from .chain import KinematicChain, Joint, chain_frames, forward_kinematics, jacobian, pseudoinverse
from .geometry import Pose
from .ik import (
    IkParams,
    IkRequest,
    IkSolution,
    IkError,
    NoConvergence,
    UnreachableTarget,
    Infeasible,
    RacingFailure,
    solve_jacobian_ik,
    solve_sqp_ik,
    solve_racing_ik,
)
from .rvo import (
    Sphere,
    RvoResult,
    decompose_chain,
    sphere_distance,
    rvo_membership,
    constraint_factor,
    neighbor_filter,
)
from .pso import SwarmConfig, SwarmState, Particle, FitnessResult, init_swarm, pso_step, should_terminate
from .planner import ArmState, PlanRequest, PlanResult, ArmReport, Planner, generate_ik_solution
from .simulator import (
    Scene,
    SceneError,
    InitialCollision,
    TrajectoryLog,
    OracleReport,
    BenchReport,
    load_scene,
    run,
    oracle_check,
    benchmark,
)

__version__ = "0.1.0"
