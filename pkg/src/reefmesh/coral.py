"""Seeded procedural coral: a closed, genus-0 tree of tubes.

Each branch is a tube of rings with ``2m`` vertices. At a fork the parent's
last ring is cut in two by a seam of ``m - 1`` vertices running across the
tube; each half plus the seam forms the first ring of one child, so the
junction adds no faces and stays edge-manifold. Branch ends are closed by
fan caps around a pole vertex. The result is a topological sphere
(Euler characteristic 2) by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import TriangleMesh

MASK64 = (1 << 64) - 1


@dataclass
class _Branch:
    direction: np.ndarray
    length: float
    r0: float
    r1: float
    bend_axis: np.ndarray
    bend: float
    children: list = field(default_factory=list)


def _rotation(axis, angle):
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def _align(a, b):
    """Minimal rotation taking unit vector a onto unit vector b."""
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    if s < 1e-14:
        return np.eye(3)
    return _rotation(axis, np.arctan2(s, c))


def _perpendicular(d, rng):
    v = rng.normal(size=3)
    v -= d * np.dot(v, d)
    return v / np.linalg.norm(v)


def _depth_for(target_faces):
    return int(np.clip(round(np.log2(target_faces / 100.0) / 3.0), 1, 5))


def _grow(rng, depth):
    root = _Branch(np.array([0.0, 0.0, 1.0]), 0.5, 0.12, 0.10,
                   np.array([1.0, 0.0, 0.0]), 0.0)
    root.bend_axis = _perpendicular(root.direction, rng)
    root.bend = rng.uniform(-0.15, 0.15)
    frontier = [root]
    for _ in range(depth):
        nxt = []
        for b in frontier:
            # direction of each child is decided at build time from the fork frame
            for side in (0, 1):
                child = _Branch(
                    direction=np.zeros(3),
                    length=b.length * rng.uniform(0.75, 0.95),
                    r0=b.r1 * rng.uniform(0.68, 0.8),
                    r1=0.0,
                    bend_axis=np.zeros(3),
                    bend=rng.uniform(-0.5, 0.5),
                )
                child.r1 = child.r0 * rng.uniform(0.75, 0.9)
                child.spread = np.deg2rad(rng.uniform(25.0, 55.0))
                child.bend_phase = rng.uniform(0.0, 2 * np.pi)
                b.children.append(child)
                nxt.append(child)
            b.twist = rng.uniform(0.0, 1.0)
        frontier = nxt
    return root


def _iter(root):
    stack = [root]
    while stack:
        b = stack.pop()
        yield b
        stack.extend(reversed(b.children))


def _bands(b, m, spacing):
    r_mid = 0.5 * (b.r0 + b.r1)
    step = spacing * 2.0 * np.pi * r_mid / (2 * m)
    return max(1, int(round(b.length / step)))


def _face_count(root, m, spacing):
    branches = list(_iter(root))
    leaves = sum(1 for b in branches if not b.children)
    return sum(4 * m * _bands(b, m, spacing) for b in branches) + 2 * m * (leaves + 1)


def _choose_resolution(root, target):
    best = None
    for m in range(2, 4096):
        if _face_count(root, m, 1.0) > 4 * target and m > 2:
            break
        lo, hi = np.log(0.05), np.log(50.0)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _face_count(root, m, np.exp(mid)) > target:
                lo = mid
            else:
                hi = mid
        for s in (np.exp(lo), np.exp(hi)):
            f = _face_count(root, m, s)
            # prefer near-square quads: spacing close to 1
            score = (abs(f - target) / target > 0.02, abs(np.log(s)))
            if best is None or score < best[0]:
                best = (score, m, s)
    return best[1], best[2]


class _Builder:
    def __init__(self, m):
        self.m = m
        self.n = 2 * m
        self.pos = []
        self.faces = []
        self.count = 0

    def add(self, pts):
        pts = np.atleast_2d(pts)
        idx = np.arange(self.count, self.count + len(pts))
        self.pos.append(pts)
        self.count += len(pts)
        return idx

    def band(self, a, b):
        a1, b1 = np.roll(a, -1), np.roll(b, -1)
        self.faces.append(np.stack([a, a1, b1], 1))
        self.faces.append(np.stack([a, b1, b], 1))

    def cap_top(self, ring, pole):
        self.faces.append(np.stack([ring, np.roll(ring, -1), np.full(len(ring), pole)], 1))

    def cap_bottom(self, ring, pole):
        self.faces.append(np.stack([np.roll(ring, -1), ring, np.full(len(ring), pole)], 1))


def _ring_angles(loop_pts, center, u, v):
    rel = loop_pts - center
    ang = np.arctan2(rel @ v, rel @ u)
    steps = np.mod(np.diff(ang), 2 * np.pi)
    return ang[0] + np.concatenate([[0.0], np.cumsum(steps)])


def _build_branch(bld, b, start_idx, start_pts, frame, base, spacing, rng):
    u, v, d = frame
    n, m = bld.n, bld.m
    nb = _bands(b, m, spacing)
    if start_idx is None:
        alpha = 2 * np.pi * np.arange(n) / n
    else:
        alpha = _ring_angles(start_pts, base, u, v)
    uniform = 2 * np.pi * np.arange(n) / n
    uniform = uniform + np.mean(alpha - uniform)
    ds = b.length / nb
    center = base.copy()
    rot_step = _rotation(b.bend_axis, b.bend / nb) if b.bend != 0.0 else np.eye(3)
    first = 0
    if start_idx is None:
        ring_pts = center + b.r0 * (np.cos(alpha)[:, None] * u + np.sin(alpha)[:, None] * v)
        prev = bld.add(ring_pts)
        pole = bld.add(center - 0.6 * b.r0 * d)[0]
        bld.cap_bottom(prev, pole)
    else:
        prev = start_idx
    for k in range(first + 1, nb + 1):
        Rk = rot_step
        d = Rk @ d
        u = Rk @ u
        v = Rk @ v
        center = center + ds * d
        t = k / nb
        r = (1 - t) * b.r0 + t * b.r1
        w = min(1.0, k / 3.0)
        ang = (1 - w) * alpha + w * uniform
        ring = bld.add(center + r * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v))
        bld.band(prev, ring)
        prev = ring
    if not b.children:
        tip = bld.add(center + 0.6 * b.r1 * d)[0]
        bld.cap_top(prev, tip)
        return

    # fork: cut the last ring with a seam across the tube
    offset = int(b.twist * n) % n
    P = np.roll(prev, -offset)
    pts = np.concatenate(bld.pos)
    Pp = pts[P]
    u0 = Pp[0] - center
    u0 -= d * np.dot(u0, d)
    u0 /= np.linalg.norm(u0)
    v0 = np.cross(d, u0)
    i = np.arange(1, m)
    seam_pts = Pp[0] + (i / m)[:, None] * (Pp[m] - Pp[0]) + (0.35 * b.r1 * np.sin(np.pi * i / m))[:, None] * d
    S = bld.add(seam_pts)
    loop_a = np.concatenate([P[: m + 1], S[::-1]])
    loop_b = np.concatenate([P[m:], P[:1], S])
    all_pts = np.concatenate(bld.pos)
    for child, loop, sign in ((b.children[0], loop_a, 1.0), (b.children[1], loop_b, -1.0)):
        cd = np.cos(child.spread) * d + sign * np.sin(child.spread) * v0
        cd /= np.linalg.norm(cd)
        R = _align(d, cd)
        cu, cv = R @ u0, R @ v0
        child.direction = cd
        child.bend_axis = np.cos(child.bend_phase) * cu + np.sin(child.bend_phase) * cv
        loop_pts = all_pts[loop]
        cbase = loop_pts.mean(axis=0)
        _build_branch(bld, child, loop, loop_pts, (cu, cv, cd), cbase, spacing, rng)


def generate_test_coral(seed: int, target_faces: int) -> TriangleMesh:
    """Branching coral-like tube mesh with about ``target_faces`` faces.

    The face count lands within 10% of the target (usually within 2%).
    The mesh is closed, edge-manifold, consistently oriented and scaled so
    its longest bounding-box side is 1 with the minimum corner at the origin.
    Output is bit-identical for equal ``(seed, target_faces)``.
    """
    if int(target_faces) < 100:
        raise ValueError("target_faces must be at least 100")
    rng = np.random.default_rng(int(seed) & MASK64)
    root = _grow(rng, _depth_for(target_faces))
    m, spacing = _choose_resolution(root, int(target_faces))
    bld = _Builder(m)
    d = root.direction
    u = np.array([1.0, 0.0, 0.0])
    v = np.cross(d, u)
    _build_branch(bld, root, None, None, (u, v, d), np.zeros(3), spacing, rng)
    pos = np.concatenate(bld.pos)
    faces = np.concatenate(bld.faces)
    lo, hi = pos.min(0), pos.max(0)
    pos = (pos - lo) / (hi - lo).max()
    return TriangleMesh(pos, faces)
