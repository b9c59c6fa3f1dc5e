"""Velocity-obstacle geometry over bounding spheres.

Arms are conservatively covered by spheres riding on the link segments. For a
sphere s and a moving obstacle sphere a, the truncated velocity obstacle is
the set of relative velocities v = v_s - v_a for which the segment
{O_s + t v : t in [0, tau]} meets the Minkowski sphere of radius r_s + r_a
around O_a. In velocity space that region is the cone from the origin tangent
to Ball(dO, r_s + r_a), dO = O_a - O_s, truncated by the cap sphere of radius
(r_s + r_a)/tau centered at dO/tau.

``constraint_factor`` returns the signed distance from the relative velocity
to the region boundary: positive outside (safe for the next tau seconds under
constant velocities), negative inside, zero on the boundary. The sign is
decided by the same closed-form closest-approach test that defines
membership, so the two can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import KinematicChain, chain_frames
from .geometry import Pose

_EPS = 1e-12


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    owner: str = ""
    part: int = 0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if not self.radius > 0.0:
            raise ValueError("sphere radius must be positive")
        if not (np.all(np.isfinite(self.center)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("sphere center and velocity must be finite")

    @property
    def tag(self) -> str:
        return f"{self.owner}#{self.part}"


@dataclass
class RvoResult:
    margin: float  # signed distance to the region boundary; <= 0 means collision course
    to_boundary: np.ndarray  # vector from the relative velocity to its nearest boundary point
    from_apex: np.ndarray  # relative velocity minus the cap-sphere center dO/tau
    pair: tuple[str, str]
    horizon: float


def sphere_distance(a: Sphere, b: Sphere) -> float:
    """Center distance; the pair is colliding iff D <= r_a + r_b."""
    d = a.center - b.center
    return math.sqrt(float(d @ d))


def _closest_miss(d, v, tau):
    """Min over t in [0, tau] of ||d - t v||, the closest approach of the
    constant-velocity segment to the Minkowski sphere center."""
    vv = float(v @ v)
    t = 0.0 if vv < _EPS else min(max(float(d @ v) / vv, 0.0), tau)
    diff = d - t * v
    return math.sqrt(float(diff @ diff)), t


def rvo_membership(s: Sphere, a: Sphere, tau: float) -> bool:
    """True iff the relative velocity lies inside the tau-truncated region."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    d = a.center - s.center
    v = s.velocity - a.velocity
    miss, _ = _closest_miss(d, v, tau)
    return miss <= s.radius + a.radius


def _boundary_closest(d_norm, radius_sum, tau, v2):
    """Closest point (2D) on the truncated-cone boundary to query v2 = (a, b), b >= 0.

    Axis along +x toward the obstacle. Cap sphere: center (c, 0), radius rho,
    internally tangent to the cone of half-angle alpha (sin alpha =
    radius_sum / d_norm). Boundary pieces: the apex-facing part of the cap
    sphere (points x with x . (c_vec - x) >= 0, i.e. inside the Thales sphere
    over [0, c_vec], which ends exactly at the tangency circle) and the cone
    lateral surface beyond the tangent length L = c cos(alpha).
    """
    c = d_norm / tau
    rho = radius_sum / tau
    sin_a = radius_sum / d_norm
    cos_a = math.sqrt(max(0.0, 1.0 - sin_a * sin_a))
    tangent_len = c * cos_a
    a, b = float(v2[0]), float(v2[1])

    best = None
    # cap sphere candidate
    w0, w1 = a - c, b
    wn = math.sqrt(w0 * w0 + w1 * w1)
    if wn < _EPS:
        best = (rho, np.array([c - rho, 0.0]))  # any valid direction; pick apex-facing
    else:
        x0 = c + (rho / wn) * w0
        x1 = (rho / wn) * w1
        if x0 * (c - x0) + x1 * (-x1) >= -_EPS:
            best = (abs(wn - rho), np.array([x0, x1]))
    # lateral surface candidate (the b >= 0 generator line, clamped to the valid part)
    s_proj = max(a * cos_a + b * sin_a, tangent_len)
    l0, l1 = s_proj * cos_a, s_proj * sin_a
    d_lat = math.sqrt((a - l0) * (a - l0) + (b - l1) * (b - l1))
    if best is None or d_lat < best[0]:
        best = (d_lat, np.array([l0, l1]))
    return best


def constraint_factor(s: Sphere, a: Sphere, tau: float) -> RvoResult:
    """Signed clearance of the relative velocity with respect to the region.

    margin > 0: the pair stays separated for at least tau seconds under
    constant velocities; margin <= 0: contact within tau (or already
    overlapping, where the margin is minus the penetration depth).
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    d = a.center - s.center
    v_rel = s.velocity - a.velocity
    radius_sum = s.radius + a.radius
    d_norm = math.sqrt(float(d @ d))
    pair = (s.tag, a.tag)
    apex = d / tau if d_norm > _EPS else np.zeros(3)
    from_apex = v_rel - apex

    if d_norm <= radius_sum:
        # already interpenetrating: report minus the penetration depth so the
        # fitness gradient pushes the pair apart
        return RvoResult(d_norm - radius_sum, np.zeros(3), from_apex, pair, tau)

    miss, _ = _closest_miss(d, v_rel, tau)
    inside = miss <= radius_sum

    # 2D reduction: e1 along d, e2 spanning the relative-velocity component
    e1 = d / d_norm
    perp = v_rel - (v_rel @ e1) * e1
    pn = math.sqrt(float(perp @ perp))
    if pn > _EPS:
        e2 = perp / pn
    else:
        pick = np.array([1.0, 0.0, 0.0]) if abs(e1[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e2 = np.cross(e1, pick)
        e2 /= np.linalg.norm(e2)
    v2 = np.array([float(v_rel @ e1), pn])
    dist, x2 = _boundary_closest(d_norm, radius_sum, tau, v2)
    to_boundary = (x2[0] * e1 + x2[1] * e2) - v_rel
    margin = -dist if inside else dist
    return RvoResult(margin, to_boundary, from_apex, pair, tau)


def neighbor_filter(spheres: list, subject: Sphere, tau: float) -> list:
    """Keep only spheres close enough to possibly touch subject within tau.

    The cut radius is r_subject + max other radius + (|v_subject| + max other
    speed) * tau, which upper-bounds how far any candidate pair can close the
    gap in tau seconds.
    """
    if not spheres:
        return []
    max_r = max(o.radius for o in spheres)
    max_v = max(math.sqrt(float(o.velocity @ o.velocity)) for o in spheres)
    own_v = math.sqrt(float(subject.velocity @ subject.velocity))
    cut = subject.radius + max_r + (own_v + max_v) * tau
    kept = []
    for o in spheres:
        gap = o.center - subject.center
        if math.sqrt(float(gap @ gap)) <= cut:
            kept.append(o)
    return kept


def margin_field(own: list, others: list, tau: float) -> tuple:
    """Pairwise signed margins of own spheres against others, batched.

    Vectorized twin of running ``constraint_factor`` over the
    ``neighbor_filter`` survivors pair by pair: margins[i, j] is the signed
    boundary distance for (own[i], others[j]) and kept[i, j] mirrors the
    filter cut, so masked aggregation over the row-major order visits the
    same pairs with the same branch decisions as the scalar loop. Individual
    values may differ from the scalar path at summation rounding order.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    sc = np.stack([s.center for s in own])
    sv = np.stack([s.velocity for s in own])
    sr = np.array([s.radius for s in own])
    oc = np.stack([o.center for o in others])
    ov = np.stack([o.velocity for o in others])
    orad = np.array([o.radius for o in others])

    d = oc[None, :, :] - sc[:, None, :]
    v = sv[:, None, :] - ov[None, :, :]
    rs = sr[:, None] + orad[None, :]
    d_norm = np.sqrt(np.einsum("ijk,ijk->ij", d, d))

    own_v = np.sqrt(np.einsum("ik,ik->i", sv, sv))
    max_v = float(np.sqrt(np.einsum("ik,ik->i", ov, ov)).max())
    cut = sr + float(orad.max()) + (own_v + max_v) * tau
    kept = d_norm <= cut[:, None]

    overlap = d_norm <= rs
    dn = np.where(overlap, 1.0, d_norm)  # safe divisor; overlap lanes replaced below

    vv = np.einsum("ijk,ijk->ij", v, v)
    dv = np.einsum("ijk,ijk->ij", d, v)
    t = np.where(vv < _EPS, 0.0, np.clip(dv / np.where(vv < _EPS, 1.0, vv), 0.0, tau))
    diff = d - t[:, :, None] * v
    miss = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    inside = miss <= rs

    e1 = d / dn[:, :, None]
    a = np.einsum("ijk,ijk->ij", v, e1)
    perp = v - a[:, :, None] * e1
    pn = np.sqrt(np.einsum("ijk,ijk->ij", perp, perp))

    c = d_norm / tau
    rho = rs / tau
    sin_a = rs / dn
    cos_a = np.sqrt(np.maximum(0.0, 1.0 - sin_a * sin_a))
    tangent_len = c * cos_a
    w0 = a - c
    w1 = pn
    wn = np.sqrt(w0 * w0 + w1 * w1)
    at_rest = wn < _EPS
    wns = np.where(at_rest, 1.0, wn)
    x0 = c + (rho / wns) * w0
    x1 = (rho / wns) * w1
    cap_ok = at_rest | (x0 * (c - x0) + x1 * (-x1) >= -_EPS)
    cap_dist = np.where(at_rest, rho, np.abs(wn - rho))
    s_proj = np.maximum(a * cos_a + pn * sin_a, tangent_len)
    d_lat = np.sqrt((a - s_proj * cos_a) ** 2 + (pn - s_proj * sin_a) ** 2)
    dist = np.where(cap_ok & (d_lat >= cap_dist), cap_dist, d_lat)

    margins = np.where(overlap, d_norm - rs, np.where(inside, -dist, dist))
    return margins, kept


def segment_sphere_counts(chain: KinematicChain) -> list:
    """Spheres per link segment: ceil(L / r), at least one.

    Segment lengths are fixed by the chain's offsets, so counts never change
    with the configuration.
    """
    lengths = [float(np.linalg.norm(j.offset)) for j in chain.joints[1:]]
    if chain.tip_offset is not None:
        lengths.append(float(np.linalg.norm(chain.tip_offset)))
    return [max(1, math.ceil(L / r - 1e-9)) for L, r in zip(lengths, chain.link_radii)]


def decompose_chain(
    chain: KinematicChain,
    q,
    q_prev=None,
    dt: float = 1.0,
    base_pose: Pose | None = None,
) -> list:
    """Cover every movable link with spheres and attach finite-difference velocities.

    Each segment of length L and bounding radius r gets k = ceil(L/r) spheres
    centered at the fractions (i + 0.5)/k along the segment, which spaces
    centers at most r apart: consecutive spheres overlap by at least r and the
    segment ends sit within r/2 of the outermost centers, so the swept link is
    fully covered. A zero-length segment collapses to a single sphere at the
    joint origin. Velocities are (position(q) - position(q_prev)) / dt for the
    same attachment fractions; with q_prev omitted they are zero.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    pts = chain_frames(chain, q).link_points
    prev_pts = pts.copy() if q_prev is None else chain_frames(chain, q_prev).link_points
    if base_pose is not None:
        R, t = base_pose.rotation(), base_pose.position
        pts = pts @ R.T + t
        prev_pts = prev_pts @ R.T + t
    counts = segment_sphere_counts(chain)
    spheres = []
    part = 0
    for i, k in enumerate(counts):
        r = chain.link_radii[i]
        for j in range(k):
            f = (j + 0.5) / k
            pos = pts[i] + f * (pts[i + 1] - pts[i])
            prev = prev_pts[i] + f * (prev_pts[i + 1] - prev_pts[i])
            vel = np.zeros(3) if q_prev is None else (pos - prev) / dt
            spheres.append(Sphere(pos, float(r), vel, owner=chain.name, part=part))
            part += 1
    return spheres
