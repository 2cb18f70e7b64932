"""Foundational 3-D geometry: transforms, triangle meshes, distance queries.

All lengths are millimeters, all angles radians.  Points are numpy arrays of
shape (3,) and point sets are (n, 3); both are accepted wherever a point
argument is documented.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateSegment,
    FactorOutOfRange,
    InvertedOrientation,
    OpenMesh,
)

_DEGENERATE_AREA = 1e-9  # mm^2


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=float)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-length vector")
    return v / n


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = _unit(np.asarray(axis, dtype=float))
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the quaternion with non-negative w."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion stored as unit quaternion + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion norm {n} too far from 1")
        object.__setattr__(self, "rotation", q / n)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(quat_from_axis_angle(np.asarray(axis, float), angle),
                   np.asarray(translation, float))

    @classmethod
    def from_matrix(cls, R: np.ndarray, t) -> "RigidTransform":
        return cls(quat_from_matrix(R), np.asarray(t, float))

    @classmethod
    def random(cls, rng: np.random.Generator, max_translation: float = 100.0) -> "RigidTransform":
        q = rng.normal(size=4)
        t = rng.uniform(-max_translation, max_translation, size=3)
        return cls(q / np.linalg.norm(q), t)

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.matrix().T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other).apply(p) == self.apply(other.apply(p))."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.apply(other.translation)
        return RigidTransform(q / np.linalg.norm(q), t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def invert(self) -> "RigidTransform":
        q_inv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidTransform(q_inv, -(self.translation @ self.matrix()))


@dataclass(frozen=True)
class SimilarityTransform:
    """Uniform scale followed by a rigid motion: p -> s*R*p + t."""

    scale: float = 1.0
    rigid: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.rigid.apply(np.asarray(p, dtype=float) * self.scale)

    def invert(self) -> "SimilarityTransform":
        inv = self.rigid.invert()
        return SimilarityTransform(1.0 / self.scale,
                                   RigidTransform(inv.rotation, inv.translation / self.scale))


def apply_transform(t: RigidTransform | SimilarityTransform, p: np.ndarray) -> np.ndarray:
    """Apply a rigid or similarity transform to a point or (n, 3) point set."""
    return t.apply(p)


# ---------------------------------------------------------------------------
# triangle meshes
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TriMesh:
    """Triangulated surface; closed and outward-oriented unless stated otherwise."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=int).reshape(-1, 3)

    @cached_property
    def triangles(self) -> np.ndarray:
        """(m, 3, 3) corner positions."""
        return self.vertices[self.faces]

    @cached_property
    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def check_closed(self) -> None:
        """Raise OpenMesh unless every directed edge appears exactly once and
        its reverse exactly once (closed, consistently oriented, manifold)."""
        if np.any(self.face_areas <= _DEGENERATE_AREA):
            bad = int(np.argmin(self.face_areas))
            raise OpenMesh(f"degenerate face {bad} (area <= {_DEGENERATE_AREA} mm^2)")
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        seen: dict[tuple[int, int], int] = {}
        for a, b in directed:
            key = (int(a), int(b))
            seen[key] = seen.get(key, 0) + 1
        for (a, b), count in seen.items():
            if count != 1:
                raise OpenMesh(f"directed edge ({a},{b}) used {count} times")
            if (b, a) not in seen:
                raise OpenMesh(f"boundary edge ({a},{b})")

    def transformed(self, t: RigidTransform | SimilarityTransform) -> "TriMesh":
        return TriMesh(t.apply(self.vertices), self.faces.copy())

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy())


def signed_volume(m: TriMesh) -> float:
    t = m.triangles
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def mesh_volume(m: TriMesh) -> float:
    """Enclosed volume in mm^3 via the divergence theorem; mesh must be closed
    and outward-oriented."""
    m.check_closed()
    v = signed_volume(m)
    if v < 0:
        raise InvertedOrientation(f"signed volume {v:.3f} mm^3 is negative")
    return v


def scale_to_volume_factor(m: TriMesh, factor: float) -> TriMesh:
    """Uniformly scale about the vertex centroid so volume changes by `factor`."""
    if not (0.5 < factor <= 2.0):
        raise FactorOutOfRange(f"factor {factor} outside (0.5, 2.0]")
    m.check_closed()
    c = m.centroid()
    s = factor ** (1.0 / 3.0)
    return TriMesh(c + (m.vertices - c) * s, m.faces.copy())


# ---------------------------------------------------------------------------
# closest-point and intersection kernels (vectorized over triangles)
# ---------------------------------------------------------------------------

def closest_points_on_triangles(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest point to `p` on each triangle.

    p: (n, 3) query points; tri: (n, 3, 3) one triangle per query (broadcast
    by the callers).  Region classification follows the standard barycentric
    case analysis.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    region_a = (d1 <= 0) & (d2 <= 0)
    out[region_a] = a[region_a]
    done |= region_a

    region_b = ~done & (d3 >= 0) & (d4 <= d3)
    out[region_b] = b[region_b]
    done |= region_b

    vc = d1 * d4 - d3 * d2
    region_ab = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = d1 / (d1 - d3)
    out[region_ab] = a[region_ab] + v[region_ab, None] * ab[region_ab]
    done |= region_ab

    region_c = ~done & (d6 >= 0) & (d5 <= d6)
    out[region_c] = c[region_c]
    done |= region_c

    vb = d5 * d2 - d1 * d6
    region_ac = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = d2 / (d2 - d6)
    out[region_ac] = a[region_ac] + w[region_ac, None] * ac[region_ac]
    done |= region_ac

    va = d3 * d6 - d5 * d4
    region_bc = ~done & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        w2 = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    out[region_bc] = b[region_bc] + w2[region_bc, None] * (c[region_bc] - b[region_bc])
    done |= region_bc

    inside = ~done
    denom = va + vb + vc
    with np.errstate(invalid="ignore", divide="ignore"):
        v_in = vb / denom
        w_in = vc / denom
    out[inside] = (a[inside] + v_in[inside, None] * ab[inside]
                   + w_in[inside, None] * ac[inside])
    return out


def closest_point_on_mesh(points: np.ndarray, mesh: TriMesh,
                          chunk: int = 4_000_000) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact closest surface points for a batch of queries.

    Returns (closest (n,3), distance (n,), face index (n,)).  Work is chunked
    so the (points x triangles) expansion stays within memory.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri = mesh.triangles
    n, m = len(pts), len(tri)
    rows = max(1, chunk // max(m, 1))
    best = np.empty((n, 3))
    best_d = np.empty(n)
    best_f = np.empty(n, dtype=int)
    for lo in range(0, n, rows):
        hi = min(lo + rows, n)
        p_block = np.repeat(pts[lo:hi], m, axis=0)
        t_block = np.tile(tri, (hi - lo, 1, 1))
        cp = closest_points_on_triangles(p_block, t_block).reshape(hi - lo, m, 3)
        d2 = np.sum((cp - pts[lo:hi, None, :]) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)
        best[lo:hi] = cp[np.arange(hi - lo), idx]
        best_d[lo:hi] = np.sqrt(d2[np.arange(hi - lo), idx])
        best_f[lo:hi] = idx
    return best, best_d, best_f


class MeshProximity:
    """Accelerated closest-point queries against one mesh.

    Candidate faces come from the k nearest vertices (KD-tree), then the exact
    point-triangle test runs on those.  Meant for iterative fitting loops; use
    closest_point_on_mesh for exhaustive exactness.
    """

    def __init__(self, mesh: TriMesh, k_vertices: int = 16):
        from scipy.spatial import cKDTree

        self.mesh = mesh
        self.k = min(k_vertices, len(mesh.vertices))
        self.tree = cKDTree(mesh.vertices)
        n_v = len(mesh.vertices)
        incident: list[list[int]] = [[] for _ in range(n_v)]
        for f, (i, j, l) in enumerate(mesh.faces):
            incident[i].append(f)
            incident[j].append(f)
            incident[l].append(f)
        deg = max(len(lst) for lst in incident)
        table = np.zeros((n_v, deg), dtype=int)
        for v, lst in enumerate(incident):
            padded = lst + [lst[0] if lst else 0] * (deg - len(lst))
            table[v] = padded
        self.vertex_faces = table

    def closest(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.closest_on(points, self.mesh.vertices)

    def closest_on(self, points: np.ndarray,
                   vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Closest points against the same topology with moved vertices.

        Candidates still come from the construction-time KD-tree, so the
        vertex motion must be moderate relative to the k-neighborhood size.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _, vidx = self.tree.query(pts, k=self.k)
        vidx = np.atleast_2d(vidx)
        cand = self.vertex_faces[vidx].reshape(len(pts), -1)   # (n, k*deg)
        tri = vertices[self.mesh.faces[cand]]                  # (n, F, 3, 3)
        n, f = cand.shape
        p_block = np.repeat(pts, f, axis=0)
        cp = closest_points_on_triangles(p_block, tri.reshape(-1, 3, 3)).reshape(n, f, 3)
        d2 = np.sum((cp - pts[:, None, :]) ** 2, axis=2)
        best = np.argmin(d2, axis=1)
        rows = np.arange(n)
        return cp[rows, best], np.sqrt(d2[rows, best]), cand[rows, best]


def barycentric_weights(tri: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric weights (n, 3) of points known to lie on triangles (n,3,3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1, e2 = b - a, c - a
    q = np.atleast_2d(points) - a
    d11 = np.einsum("ij,ij->i", e1, e1)
    d12 = np.einsum("ij,ij->i", e1, e2)
    d22 = np.einsum("ij,ij->i", e2, e2)
    q1 = np.einsum("ij,ij->i", q, e1)
    q2 = np.einsum("ij,ij->i", q, e2)
    det = d11 * d22 - d12 * d12
    with np.errstate(invalid="ignore", divide="ignore"):
        u = (d22 * q1 - d12 * q2) / det
        v = (d11 * q2 - d12 * q1) / det
    u = np.nan_to_num(u)
    v = np.nan_to_num(v)
    return np.column_stack([1.0 - u - v, u, v])


def farthest_point_sample(points: np.ndarray, count: int, start: int = 0) -> np.ndarray:
    """Indices of `count` points greedily maximizing mutual spacing."""
    pts = np.asarray(points, dtype=float)
    count = min(count, len(pts))
    chosen = [start]
    d = np.linalg.norm(pts - pts[start], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.array(chosen, dtype=int)


def umeyama(src: np.ndarray, dst: np.ndarray,
            with_scale: bool = True) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares similarity (s, R, t) with s*R*src + t ~= dst.

    Proper rotation is enforced; set with_scale=False for a rigid fit.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    cov = b.T @ a / len(src)
    u, s_vals, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    d = np.ones(3)
    d[2] = sign
    rot = u @ np.diag(d) @ vt
    if with_scale:
        var_s = np.mean(np.sum(a ** 2, axis=1))
        scale = float(np.sum(s_vals * d) / var_s) if var_s > 0 else 1.0
    else:
        scale = 1.0
    t = mu_d - scale * rot @ mu_s
    return scale, rot, t


def _segment_segment_distance(p0, d0, p1, d1) -> np.ndarray:
    """Min distance between segments p0+s*d0 (s in [0,1]) and p1+t*d1, vectorized.

    Clamped closest-point computation between two segments (Ericson 5.1.9).
    """
    r = p0 - p1
    a = np.einsum("ij,ij->i", d0, d0)
    e = np.einsum("ij,ij->i", d1, d1)
    f = np.einsum("ij,ij->i", d1, r)
    c = np.einsum("ij,ij->i", d0, r)
    b = np.einsum("ij,ij->i", d0, d1)
    denom = a * e - b * b

    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 1e-14, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = np.where(e > 1e-14, (b * s + f) / e, 0.0)

    # re-clamp t, then recompute s for the clamped t
    t_cl = np.clip(t, 0.0, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        s2 = np.where(a > 1e-14, np.clip((b * t_cl - c) / a, 0.0, 1.0), 0.0)
    s = np.where(t != t_cl, s2, s)
    t = t_cl

    diff = (p0 + s[:, None] * d0) - (p1 + t[:, None] * d1)
    return np.linalg.norm(diff, axis=1)


def segment_triangle_intersects(a: np.ndarray, b: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Boolean per triangle: does segment a-b cross it (Moller-Trumbore)."""
    d = b - a
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    near_parallel = np.abs(det) < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_det = 1.0 / det
        tvec = a - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1)
        v = (qvec @ d) * inv_det
        t = np.einsum("ij,ij->i", e2, qvec) * inv_det
        hit = (~near_parallel & (u >= 0) & (v >= 0) & (u + v <= 1.0)
               & (t >= 0.0) & (t <= 1.0))
    return hit


def segment_mesh_clearance(a: np.ndarray, b: np.ndarray, m: TriMesh) -> tuple[float, bool]:
    """Exact minimum distance between segment ab and the mesh surface.

    Returns (min_distance, intersects).  Distance is 0 when the segment
    crosses or touches a face.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.linalg.norm(b - a) < 1e-12:
        raise DegenerateSegment("segment endpoints coincide")
    tri = m.triangles
    if segment_triangle_intersects(a, b, tri).any():
        return 0.0, True

    # endpoint-to-triangle distances
    n = len(tri)
    d_ends = np.inf
    for p in (a, b):
        cp = closest_points_on_triangles(np.repeat(p[None, :], n, axis=0), tri)
        d_ends = min(d_ends, float(np.min(np.linalg.norm(cp - p, axis=1))))

    # segment-to-each-edge distances
    seg_p = np.repeat(a[None, :], 3 * n, axis=0)
    seg_d = np.repeat((b - a)[None, :], 3 * n, axis=0)
    edge_p = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 2]])
    edge_d = np.concatenate([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]])
    d_edges = float(np.min(_segment_segment_distance(seg_p, seg_d, edge_p, edge_d)))

    return min(d_ends, d_edges), False


# ---------------------------------------------------------------------------
# ray casting and interior tests
# ---------------------------------------------------------------------------

# Fixed direction for parity ray casts; chosen away from any mesh symmetry axis.
_RAY_DIR = _unit(np.array([0.5640795218492963, 0.7132091299983596, 0.4163056209661081]))


def ray_mesh_hits(origin: np.ndarray, direction: np.ndarray, m: TriMesh) -> np.ndarray:
    """Sorted parametric distances t >= 0 where origin + t*direction crosses the mesh."""
    origin = np.asarray(origin, dtype=float)
    direction = _unit(np.asarray(direction, dtype=float))
    tri = m.triangles
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_det = 1.0 / det
        tvec = origin - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1)
        v = (qvec @ direction) * inv_det
        t = np.einsum("ij,ij->i", e2, qvec) * inv_det
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1.0) & (t >= 0)
    ts = np.sort(t[hit])
    if len(ts) > 1:
        # crossings on shared edges/vertices are reported once per face
        keep = np.concatenate([[True], np.diff(ts) > 1e-9])
        ts = ts[keep]
    return ts


class RayCaster:
    """Repeated ray queries against one triangle set (precomputed edges)."""

    def __init__(self, mesh: TriMesh, face_mask: np.ndarray | None = None):
        tri = mesh.triangles if face_mask is None else mesh.triangles[face_mask]
        self.v0 = tri[:, 0]
        self.e1 = tri[:, 1] - tri[:, 0]
        self.e2 = tri[:, 2] - tri[:, 0]

    def hits(self, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
        pvec = np.cross(direction, self.e2)
        det = np.einsum("ij,ij->i", self.e1, pvec)
        with np.errstate(invalid="ignore", divide="ignore"):
            inv_det = 1.0 / det
            tvec = origin - self.v0
            u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
            qvec = np.cross(tvec, self.e1)
            v = (qvec @ direction) * inv_det
            t = np.einsum("ij,ij->i", self.e2, qvec) * inv_det
            hit = ((np.abs(det) > 1e-12) & (u >= 0) & (v >= 0)
                   & (u + v <= 1.0) & (t >= 0))
        ts = np.sort(t[hit])
        if len(ts) > 1:
            keep = np.concatenate([[True], np.diff(ts) > 1e-9])
            ts = ts[keep]
        return ts


def contains_points(m: TriMesh, points: np.ndarray, chunk: int = 2_000_000) -> np.ndarray:
    """Parity ray cast per point along a fixed direction; (n,) boolean."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri = m.triangles
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    d = _RAY_DIR
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_det = np.where(ok, 1.0 / det, 0.0)

    n, mtri = len(pts), len(tri)
    rows = max(1, chunk // max(mtri, 1))
    inside = np.empty(n, dtype=bool)
    for lo in range(0, n, rows):
        hi = min(lo + rows, n)
        with np.errstate(invalid="ignore"):
            tvec = pts[lo:hi, None, :] - v0[None, :, :]          # (r, m, 3)
            u = np.einsum("rmj,mj->rm", tvec, pvec) * inv_det
            qvec = np.cross(tvec, e1[None, :, :])
            v = np.einsum("rmj,j->rm", qvec, d) * inv_det
            t = np.einsum("rmj,mj->rm", qvec, e2) * inv_det
            hit = ok[None, :] & (u >= 0) & (v >= 0) & (u + v <= 1.0) & (t > 1e-9)
        inside[lo:hi] = (hit.sum(axis=1) % 2) == 1
    return inside


# ---------------------------------------------------------------------------
# mesh factories
# ---------------------------------------------------------------------------

def box_mesh(center, half_extents) -> TriMesh:
    """Axis-aligned closed box, outward-oriented."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(half_extents, dtype=float)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    verts = c + signs * h
    # index layout: bit2 = x, bit1 = y, bit0 = z
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriMesh(verts, faces)


def unit_cube() -> TriMesh:
    return box_mesh((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Geodesic sphere from a subdivided icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    verts = [tuple(_unit(np.array(v, dtype=float))) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    midpoint_cache: dict[tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        if key in midpoint_cache:
            return midpoint_cache[key]
        m = _unit((np.array(verts[i]) + np.array(verts[j])) / 2.0)
        verts.append(tuple(m))
        midpoint_cache[key] = len(verts) - 1
        return midpoint_cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for (i, j, k) in faces:
            a = midpoint(i, j)
            b = midpoint(j, k)
            c = midpoint(k, i)
            new_faces += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new_faces

    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriMesh(v, np.array(faces))


def ellipsoid(semi_axes, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    sphere = icosphere(1.0, subdivisions)
    return TriMesh(sphere.vertices * np.asarray(semi_axes, dtype=float)
                   + np.asarray(center, dtype=float), sphere.faces)
