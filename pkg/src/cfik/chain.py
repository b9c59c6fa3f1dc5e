"""Serial revolute-joint chain model.

A chain is an ordered list of revolute joints. Each joint carries a fixed
transform relative to its parent (translation offset plus roll/pitch/yaw)
followed by a rotation about a unit axis expressed in the joint's own frame.
An optional tip transform after the last joint places the end effector.

The movable geometry is the polyline of joint-frame origins (plus the tip),
with one bounding radius per segment; sphere decomposition lives in rvo.py.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_from_matrix, rotation_about_axis, rpy_matrix

AXIS_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    offset: np.ndarray
    rpy: np.ndarray = (0.0, 0.0, 0.0)
    lower: float = -np.pi
    upper: float = np.pi

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float).reshape(3))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        object.__setattr__(self, "rpy", np.asarray(self.rpy, dtype=float).reshape(3))
        if abs(np.linalg.norm(self.axis) - 1.0) > AXIS_UNIT_TOL:
            raise ValueError(f"joint axis must be a unit vector, got {self.axis}")
        if not self.lower < self.upper:
            raise ValueError(f"joint limits must satisfy lower < upper, got [{self.lower}, {self.upper}]")


@dataclass
class Frames:
    """Per-joint world-frame quantities from one kinematic sweep."""

    pose: Pose
    joint_origins: np.ndarray  # (n, 3) origin of each joint frame
    joint_axes: np.ndarray  # (n, 3) world direction of each joint axis
    link_points: np.ndarray  # (n_pts, 3) polyline of movable-link endpoints


class KinematicChain:
    """Immutable chain description with cached fixed transforms."""

    def __init__(self, name, joints, link_radii, tip_offset=None, tip_rpy=None):
        self.name = str(name)
        self.joints = list(joints)
        if not self.joints:
            raise ValueError("chain needs at least one joint")
        self.link_radii = np.asarray(link_radii, dtype=float).reshape(-1)
        self.tip_offset = None if tip_offset is None else np.asarray(tip_offset, dtype=float).reshape(3)
        self.tip_rpy = np.zeros(3) if tip_rpy is None else np.asarray(tip_rpy, dtype=float).reshape(3)

        n_segments = len(self.joints) - 1 + (1 if self.tip_offset is not None else 0)
        if len(self.link_radii) != n_segments:
            raise ValueError(
                f"chain '{self.name}' has {n_segments} link segments but {len(self.link_radii)} radii"
            )
        if np.any(self.link_radii <= 0.0):
            raise ValueError("link radii must be strictly positive")

        self._fixed = np.empty((self.n, 4, 4))
        for i, j in enumerate(self.joints):
            T = np.eye(4)
            T[:3, :3] = rpy_matrix(j.rpy)
            T[:3, 3] = j.offset
            self._fixed[i] = T
        self._tip = None
        if self.tip_offset is not None:
            T = np.eye(4)
            T[:3, :3] = rpy_matrix(self.tip_rpy)
            T[:3, 3] = self.tip_offset
            self._tip = T
        self.lower = np.array([j.lower for j in self.joints])
        self.upper = np.array([j.upper for j in self.joints])

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def n_segments(self) -> int:
        return len(self.link_radii)

    def reach_upper_bound(self) -> float:
        """Sum of fixed translation norms: no point of the chain gets farther."""
        r = sum(float(np.linalg.norm(j.offset)) for j in self.joints)
        if self.tip_offset is not None:
            r += float(np.linalg.norm(self.tip_offset))
        return r

    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape != (self.n,):
            raise ValueError(f"config has {q.size} values, chain '{self.name}' has {self.n} joints")
        return q

    def within_limits(self, q, tol=0.0) -> bool:
        q = self.check_config(q)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def clamp(self, q) -> np.ndarray:
        return np.clip(self.check_config(q), self.lower, self.upper)

    def mid_config(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def random_config(self, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    # ---- serialization ----------------------------------------------------

    @classmethod
    def from_dict(cls, d) -> "KinematicChain":
        joints = [
            Joint(
                axis=j["axis"],
                offset=j["offset"],
                rpy=j.get("rpy", [0.0, 0.0, 0.0]),
                lower=j["limit"][0],
                upper=j["limit"][1],
            )
            for j in d["joints"]
        ]
        tip = d.get("tip")
        return cls(
            name=d["name"],
            joints=joints,
            link_radii=d["link_radii"],
            tip_offset=None if tip is None else tip["offset"],
            tip_rpy=None if tip is None else tip.get("rpy", [0.0, 0.0, 0.0]),
        )

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "joints": [
                {
                    "axis": j.axis.tolist(),
                    "offset": j.offset.tolist(),
                    "rpy": j.rpy.tolist(),
                    "limit": [j.lower, j.upper],
                }
                for j in self.joints
            ],
            "link_radii": self.link_radii.tolist(),
        }
        if self.tip_offset is not None:
            d["tip"] = {"offset": self.tip_offset.tolist(), "rpy": self.tip_rpy.tolist()}
        return d

    @classmethod
    def load(cls, path) -> "KinematicChain":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def with_name(self, name: str) -> "KinematicChain":
        """Same chain under a different name, for scenes that reuse one model."""
        return KinematicChain(
            name=name,
            joints=self.joints,
            link_radii=self.link_radii,
            tip_offset=self.tip_offset,
            tip_rpy=None if self.tip_offset is None else self.tip_rpy,
        )


def chain_frames(chain: KinematicChain, q) -> Frames:
    """One kinematic sweep: end-effector pose plus every joint origin and axis."""
    q = chain.check_config(q)
    n = chain.n
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    T = np.eye(4)
    for i in range(n):
        T = T @ chain._fixed[i]
        origins[i] = T[:3, 3]
        axes[i] = T[:3, :3] @ chain.joints[i].axis
        Tr = np.eye(4)
        Tr[:3, :3] = rotation_about_axis(chain.joints[i].axis, q[i])
        T = T @ Tr
    if chain._tip is not None:
        T = T @ chain._tip
        link_points = np.vstack([origins, T[:3, 3]])
    else:
        link_points = origins.copy()
    pose = Pose(T[:3, 3].copy(), quat_from_matrix(T[:3, :3]))
    return Frames(pose=pose, joint_origins=origins, joint_axes=axes, link_points=link_points)


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    return chain_frames(chain, q).pose


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows 0-2 linear, rows 3-5 angular, world frame."""
    fr = chain_frames(chain, q)
    p_e = fr.link_points[-1]
    J = np.empty((6, chain.n))
    for i in range(chain.n):
        z = fr.joint_axes[i]
        J[:3, i] = np.cross(z, p_e - fr.joint_origins[i])
        J[3:, i] = z
    return J


def pseudoinverse(J, damping=1e-3, rel_cutoff=1e-4) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD with damping near singularities.

    Singular values below rel_cutoff * sigma_max are inverted as
    s / (s^2 + damping^2) instead of 1 / s, which keeps the result finite
    at rank deficiencies while matching the exact inverse away from them.
    """
    J = np.asarray(J, dtype=float)
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return np.zeros((J.shape[1], J.shape[0]))
    small = s < rel_cutoff * s[0]
    inv = np.empty_like(s)
    inv[~small] = 1.0 / s[~small]
    inv[small] = s[small] / (s[small] ** 2 + damping**2)
    return (Vt.T * inv) @ U.T
