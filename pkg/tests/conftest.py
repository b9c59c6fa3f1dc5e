import json
from importlib import resources

import numpy as np
import pytest

from cfik.chain import Joint, KinematicChain


def bundled_scene_dir():
    return resources.files("cfik") / "scenes"


@pytest.fixture(scope="session")
def arm7() -> KinematicChain:
    return KinematicChain.load(bundled_scene_dir() / "arm7.json")


@pytest.fixture(scope="session")
def planar2() -> KinematicChain:
    """Two unit links rotating about z in the xy plane; tip at the second link end."""
    return KinematicChain(
        name="planar2",
        joints=[Joint(axis=(0, 0, 1), offset=(0, 0, 0)), Joint(axis=(0, 0, 1), offset=(1, 0, 0))],
        link_radii=[0.05, 0.05],
        tip_offset=(1, 0, 0),
    )


def random_chain(rng: np.random.Generator, n_joints: int | None = None) -> KinematicChain:
    """A random serial chain with unit axes and sane offsets, for oracle sweeps."""
    n = int(n_joints if n_joints is not None else rng.integers(2, 8))
    joints = []
    for _ in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        offset = rng.uniform(-0.4, 0.4, size=3)
        rpy = rng.uniform(-np.pi, np.pi, size=3)
        lo = rng.uniform(-3.0, -0.5)
        hi = rng.uniform(0.5, 3.0)
        joints.append(Joint(axis=axis, offset=offset, rpy=rpy, lower=lo, upper=hi))
    tip = rng.uniform(-0.3, 0.3, size=3)
    return KinematicChain(
        name="random",
        joints=joints,
        link_radii=np.full(n, 0.05),
        tip_offset=tip,
        tip_rpy=rng.uniform(-np.pi, np.pi, size=3),
    )


@pytest.fixture()
def scene_dict() -> dict:
    """A small single-arm scene with one crossing obstacle, as a plain dict."""
    return json.loads(
        json.dumps(
            {
                "name": "test-scene",
                "manipulators": [
                    {
                        "chain_file": "arm7.json",
                        "initial_config": [0.0, 0.4, 0.0, 1.2, 0.0, 0.5, 0.0],
                        "waypoints": [{"t": 0.0, "pos": [0.50, 0.0, 0.45]}],
                    }
                ],
                "obstacles": [
                    {
                        "id": "ball",
                        "kind": "constant_velocity",
                        "radius": 0.08,
                        "center": [0.5, -2.0, 0.40],
                        "velocity": [0.0, 0.5, 0.0],
                    }
                ],
                "sim": {"dt": 0.01, "duration": 0.2, "tau": 5.0},
                "pso": {"N": 2, "T": 2, "rng_seed": 1},
                "ik": {"pos_tol": 1e-4, "ori_tol": 3.2, "max_iterations": 200},
            }
        )
    )
