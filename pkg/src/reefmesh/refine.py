"""Detail passes: Loop subdivision, Taubin smoothing, fBm noise displacement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import MeshError
from .mesh import TriangleMesh, require_manifold, require_valid

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_XS_MULT = 0x2545F4914F6CDD1D
MAX_FACES = 2 ** 31


class XorShift64Star:
    """xorshift64* generator (shifts 12, 25, 27; multiplier 0x2545F4914F6CDD1D).

    The state is ``seed XOR 0x9E3779B97F4A7C15`` (the golden-ratio constant
    itself if that is zero), so seed 0 is usable.
    """

    def __init__(self, seed: int):
        state = (int(seed) ^ _GOLDEN) & MASK64
        self.state = state or _GOLDEN

    def next(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * _XS_MULT) & MASK64


def permutation_table(seed: int) -> np.ndarray:
    """512-entry doubled permutation of 0..255 (Fisher-Yates, high index first)."""
    rng = XorShift64Star(seed)
    perm = list(range(256))
    for i in range(255, 0, -1):
        j = rng.next() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm + perm, dtype=np.int64)


def loop_beta(n: int) -> float:
    """Loop's weight for each neighbour of an interior vertex of valence n."""
    return (1.0 / n) * (5.0 / 8.0 - (3.0 / 8.0 + 0.25 * np.cos(2.0 * np.pi / n)) ** 2)


def _loop_once(pos, faces):
    nv = len(pos)
    a = faces.reshape(-1)
    b = faces[:, [1, 2, 0]].reshape(-1)
    c = faces[:, [2, 0, 1]].reshape(-1)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    edges, eid, ecount = np.unique(np.stack([lo, hi], 1), axis=0, return_inverse=True, return_counts=True)
    eid = eid.reshape(-1)
    ne = len(edges)
    boundary = ecount == 1

    ends = pos[edges[:, 0]] + pos[edges[:, 1]]
    opp = np.zeros((ne, 3))
    np.add.at(opp, eid, pos[c])
    odd = np.where(boundary[:, None], 0.5 * ends, 0.375 * ends + 0.125 * opp)

    valence = np.bincount(edges.ravel(), minlength=nv)
    nsum = np.zeros_like(pos)
    np.add.at(nsum, edges[:, 0], pos[edges[:, 1]])
    np.add.at(nsum, edges[:, 1], pos[edges[:, 0]])
    be = edges[boundary]
    bcount = np.bincount(be.ravel(), minlength=nv)
    bsum = np.zeros_like(pos)
    np.add.at(bsum, be[:, 0], pos[be[:, 1]])
    np.add.at(bsum, be[:, 1], pos[be[:, 0]])

    n = np.maximum(valence, 1)
    beta = (1.0 / n) * (5.0 / 8.0 - (3.0 / 8.0 + 0.25 * np.cos(2.0 * np.pi / n)) ** 2)
    even = (1.0 - n * beta)[:, None] * pos + beta[:, None] * nsum
    on_boundary = bcount > 0
    regular_b = bcount == 2
    even[regular_b] = 0.75 * pos[regular_b] + 0.125 * bsum[regular_b]
    # corner-like boundary vertices (not exactly two boundary edges) stay put
    irregular = on_boundary & ~regular_b
    even[irregular] = pos[irregular]
    even[valence == 0] = pos[valence == 0]

    m = (eid + nv).reshape(-1, 3)
    v0, v1, v2 = faces.T
    m01, m12, m20 = m.T
    new_faces = np.concatenate([
        np.stack([v0, m01, m20], 1),
        np.stack([v1, m12, m01], 1),
        np.stack([v2, m20, m12], 1),
        np.stack([m01, m12, m20], 1),
    ])
    return np.concatenate([even, odd]), new_faces


def loop_subdivide(mesh: TriangleMesh, levels: int = 1) -> TriangleMesh:
    """Apply ``levels`` rounds of Loop subdivision (4x faces per round).

    Original vertices keep their indices; each round appends one vertex per
    edge in sorted-edge order. Optional attributes are dropped.
    """
    if levels < 1:
        raise ValueError("levels must be a positive integer")
    if mesh.n_faces * 4 ** levels > MAX_FACES:
        raise MeshError(f"{levels} subdivision levels would exceed {MAX_FACES} faces")
    require_manifold(mesh, "loop_subdivide")
    pos, faces = mesh.positions, mesh.faces
    for _ in range(levels):
        pos, faces = _loop_once(pos, faces)
    return TriangleMesh(pos, faces)


def _umbrella(mesh):
    e = mesh.edges()
    nv = mesh.n_vertices
    adj = sparse.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                            shape=(nv, nv)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    a = mesh.faces.reshape(-1)
    b = mesh.faces[:, [1, 2, 0]].reshape(-1)
    key = np.minimum(a, b) * nv + np.maximum(a, b)
    uk, cnt = np.unique(key, return_counts=True)
    bkeys = uk[cnt == 1]
    fixed = np.zeros(nv, dtype=bool)
    fixed[bkeys // nv] = True
    fixed[bkeys % nv] = True
    fixed |= deg == 0
    return adj, np.maximum(deg, 1), fixed


def taubin_smooth(mesh: TriangleMesh, iterations: int = 10, lam: float = 0.5, mu: float = -0.53) -> TriangleMesh:
    """Alternate uniform-Laplacian steps scaled by ``lam`` then ``mu``.

    Boundary vertices are held fixed. Topology and attributes other than
    normals are kept.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    if not -1.0 < mu < 0.0:
        raise ValueError("mu must lie in (-1, 0)")
    require_valid(mesh, "taubin_smooth")
    if iterations == 0:
        return mesh
    adj, deg, fixed = _umbrella(mesh)
    free = ~fixed
    p = mesh.positions.copy()
    for _ in range(iterations):
        for w in (lam, mu):
            lap = adj @ p / deg[:, None] - p
            p[free] += w * lap[free]
    return mesh.replace(positions=p, normals=None, tangents=None)


def laplacian_smooth(mesh: TriangleMesh, iterations: int = 10, lam: float = 0.5) -> TriangleMesh:
    """Plain umbrella smoothing (shrinks); kept as the baseline Taubin is measured against."""
    adj, deg, fixed = _umbrella(mesh)
    free = ~fixed
    p = mesh.positions.copy()
    for _ in range(iterations):
        lap = adj @ p / deg[:, None] - p
        p[free] += lam * lap[free]
    return mesh.replace(positions=p, normals=None, tangents=None)


@dataclass(frozen=True)
class NoiseParams:
    seed: int
    amplitude: float
    frequency: float
    octaves: int = 4
    gain: float = 0.5
    lacunarity: float = 2.0

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be >= 0")
        if not self.frequency > 0:
            raise ValueError("frequency must be > 0")
        if not (isinstance(self.octaves, (int, np.integer)) and 1 <= self.octaves <= 8):
            raise ValueError("octaves must be an integer in [1, 8]")
        if not 0 < self.gain <= 1:
            raise ValueError("gain must lie in (0, 1]")
        if not self.lacunarity > 1:
            raise ValueError("lacunarity must be > 1")

    def bound(self) -> float:
        """Largest possible |displacement|."""
        return self.amplitude * sum(self.gain ** k for k in range(self.octaves))


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _grad(h, x, y, z):
    h = h & 15
    u = np.where(h < 8, x, y)
    v = np.where(h < 4, y, np.where((h == 12) | (h == 14), x, z))
    return np.where(h & 1, -u, u) + np.where(h & 2, -v, v)


def gradient_noise(points: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Improved Perlin noise at each point, clipped to [-1, 1]."""
    p = np.asarray(points, dtype=np.float64)
    cell = np.floor(p)
    f = p - cell
    X, Y, Z = (cell.astype(np.int64) & 255).T
    x, y, z = f.T
    u, v, w = _fade(x), _fade(y), _fade(z)
    A = perm[X] + Y
    AA, AB = perm[A] + Z, perm[A + 1] + Z
    B = perm[X + 1] + Y
    BA, BB = perm[B] + Z, perm[B + 1] + Z

    def lerp(t, a, b):
        return a + t * (b - a)

    res = lerp(w,
               lerp(v, lerp(u, _grad(perm[AA], x, y, z), _grad(perm[BA], x - 1, y, z)),
                    lerp(u, _grad(perm[AB], x, y - 1, z), _grad(perm[BB], x - 1, y - 1, z))),
               lerp(v, lerp(u, _grad(perm[AA + 1], x, y, z - 1), _grad(perm[BA + 1], x - 1, y, z - 1)),
                    lerp(u, _grad(perm[AB + 1], x, y - 1, z - 1), _grad(perm[BB + 1], x - 1, y - 1, z - 1))))
    return np.clip(res, -1.0, 1.0)


# decorrelates octaves that would otherwise share lattice points at the origin
_OCTAVE_SHIFT = np.array([19.19, 47.77, 11.31])


def fbm(points: np.ndarray, params: NoiseParams) -> np.ndarray:
    """Fractal sum of gradient noise; depends only on position and params."""
    perm = permutation_table(params.seed)
    p = np.asarray(points, dtype=np.float64) * params.frequency
    total = np.zeros(len(p))
    amp, freq = 1.0, 1.0
    for k in range(params.octaves):
        total += amp * gradient_noise(p * freq + k * _OCTAVE_SHIFT, perm)
        amp *= params.gain
        freq *= params.lacunarity
    return total


def noise_displace(mesh: TriangleMesh, params: NoiseParams) -> TriangleMesh:
    """Move every vertex along its unit normal by ``amplitude * fbm(position)``."""
    require_valid(mesh, "noise_displace")
    if params.amplitude == 0:
        return mesh
    normals = mesh.vertex_normals()
    offset = params.amplitude * fbm(mesh.positions, params)
    return mesh.replace(positions=mesh.positions + offset[:, None] * normals, normals=None, tangents=None)
