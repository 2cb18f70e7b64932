"""Elastic surface registration with a volume-preservation penalty.

The deformation is a thin-plate spline over control points sampled on the
source surface (3-D kernel U(r) = r) plus an affine part.  Registration
alternates closest-point correspondences with a regularized linear solve;
the volume constraint enters as a soft quadratic penalty linearized once per
iteration (Gauss-Newton).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonClosedMesh, OpenMesh, VolumeRatioOutOfRange
from .geom import (
    MeshProximity,
    TriMesh,
    farthest_point_sample,
    mesh_volume,
    signed_volume,
)


@dataclass(frozen=True)
class RegistrationParams:
    lambda_bend: float = 1e-3
    lambda_vol: float = 10.0
    max_iters: int = 50
    tol_mm: float = 1e-4
    n_control: int = 100

    def __post_init__(self):
        if self.lambda_bend < 0 or self.lambda_vol < 0:
            raise ValueError("penalty weights must be >= 0")
        if not self.tol_mm > 0:
            raise ValueError("tol_mm must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class DeformationField:
    """phi(p) = affine @ [p; 1] + sum_j w_j * |p - c_j|."""

    control_points: np.ndarray
    tps_weights: np.ndarray
    affine: np.ndarray   # (3, 4): linear part then offset column

    def __post_init__(self):
        object.__setattr__(self, "control_points", np.asarray(self.control_points, float))
        object.__setattr__(self, "tps_weights", np.asarray(self.tps_weights, float))
        object.__setattr__(self, "affine", np.asarray(self.affine, float).reshape(3, 4))

    @classmethod
    def identity(cls) -> "DeformationField":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)),
                   np.hstack([np.eye(3), np.zeros((3, 1))]))


@dataclass(frozen=True)
class RegistrationResult:
    field: DeformationField
    surface_rms: float
    volume_error: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))


def apply_field(fld: DeformationField, p: np.ndarray) -> np.ndarray:
    """Evaluate the deformation at a point or (n, 3) point set."""
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    out = pts @ fld.affine[:, :3].T + fld.affine[:, 3]
    if len(fld.control_points):
        u = np.linalg.norm(pts[:, None, :] - fld.control_points[None, :, :], axis=2)
        out = out + u @ fld.tps_weights
    return out[0] if np.asarray(p).ndim == 1 else out


def map_points(fld: DeformationField, pts) -> np.ndarray:
    """Elementwise apply_field over a list of points."""
    arr = np.asarray(pts, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 3))
    return apply_field(fld, arr.reshape(-1, 3))


def tps_interpolate(control_points: np.ndarray, displacements: np.ndarray,
                    smoothing: float = 0.0) -> DeformationField:
    """Field through assigned control displacements (exact when smoothing=0).

    Solves the classic bordered system [K + s*I, P; P^T, 0] for weights and
    the affine correction, then folds the identity map into the affine part so
    the field returns absolute target positions.
    """
    c = np.asarray(control_points, dtype=float)
    d = np.asarray(displacements, dtype=float)
    m = len(c)
    k = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    p = np.hstack([np.ones((m, 1)), c])
    lhs = np.zeros((m + 4, m + 4))
    lhs[:m, :m] = k + smoothing * np.eye(m)
    lhs[:m, m:] = p
    lhs[m:, :m] = p.T
    rhs = np.vstack([d, np.zeros((4, 3))])
    sol = np.linalg.solve(lhs, rhs)
    w = sol[:m]
    a = sol[m:]            # rows: bias, x, y, z; columns: output dims
    affine = np.hstack([a[1:].T + np.eye(3), a[0][:, None]])
    return DeformationField(c, w, affine)


def _volume_gradient(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """d(signed volume)/d(vertex), accumulated over incident faces."""
    tri = vertices[faces]
    grad = np.zeros_like(vertices)
    np.add.at(grad, faces[:, 0], np.cross(tri[:, 1], tri[:, 2]) / 6.0)
    np.add.at(grad, faces[:, 1], np.cross(tri[:, 2], tri[:, 0]) / 6.0)
    np.add.at(grad, faces[:, 2], np.cross(tri[:, 0], tri[:, 1]) / 6.0)
    return grad


def _prealign(source: TriMesh, target: TriMesh,
              prox: MeshProximity) -> tuple[np.ndarray, np.ndarray]:
    """Rigid pre-alignment from centroids and principal axes.

    Tries the four proper sign combinations plus identity and keeps what puts
    the source vertices closest to the target surface.
    """
    cs = source.vertices.mean(axis=0)
    ct = target.vertices.mean(axis=0)
    _, es = np.linalg.eigh((source.vertices - cs).T @ (source.vertices - cs))
    _, et = np.linalg.eigh((target.vertices - ct).T @ (target.vertices - ct))
    candidates = [np.eye(3)]
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            d = np.diag([s1, s2, s1 * s2])
            candidates.append(et @ d @ es.T)
    best_rot, best_score = np.eye(3), np.inf
    sample = source.vertices[::4]
    for rot in candidates:
        if np.linalg.det(rot) < 0:
            continue
        moved = (sample - cs) @ rot.T + ct
        _, dist, _ = prox.closest(moved)
        score = float(np.mean(dist))
        if score < best_score:
            best_score, best_rot = score, rot
    return best_rot, ct - best_rot @ cs


def elastic_register(source: TriMesh, target: TriMesh,
                     params: RegistrationParams | None = None) -> RegistrationResult:
    """Register the source surface onto the target.

    Objective per iteration: mean squared vertex-to-correspondence distance
    + lambda_bend * bending energy + lambda_vol * (V/Vt - 1)^2, solved in
    closed form for the TPS weights and affine part with the volume term
    linearized at the current deformation.  A backtracking step keeps the
    true objective non-increasing.
    """
    params = params or RegistrationParams()
    try:
        v_source = mesh_volume(source)
        v_target = mesh_volume(target)
    except OpenMesh as exc:
        raise NonClosedMesh(str(exc)) from exc
    ratio = v_target / v_source
    if not (0.5 <= ratio <= 2.0):
        raise VolumeRatioOutOfRange(f"target/source volume ratio {ratio:.3f}")

    prox = MeshProximity(target)
    rot0, t0 = _prealign(source, target, prox)

    verts0 = source.vertices              # original frame
    verts_pre = verts0 @ rot0.T + t0      # pre-aligned frame
    n = len(verts_pre)
    faces = source.faces

    ctrl_idx = farthest_point_sample(verts_pre, params.n_control)
    ctrl = verts_pre[ctrl_idx]
    m = len(ctrl)

    # constant structures for the least-squares solves
    kmat = np.linalg.norm(ctrl[:, None, :] - ctrl[None, :, :], axis=2)
    pmat = np.hstack([np.ones((m, 1)), ctrl])
    q_full, _ = np.linalg.qr(pmat, mode="complete")
    nullb = q_full[:, 4:]               # (m, m-4)
    m_red = nullb.shape[1]
    bend_q = -(nullb.T @ kmat @ nullb)  # conditionally PD part of the energy
    bend_q = 0.5 * (bend_q + bend_q.T)

    u_vc = np.linalg.norm(verts_pre[:, None, :] - ctrl[None, :, :], axis=2)
    basis = np.hstack([u_vc @ nullb, np.ones((n, 1)), verts_pre])  # (n, m_red + 4)
    dim_block = basis.shape[1]
    h_data = basis.T @ basis / n
    h_bend = np.zeros_like(h_data)
    h_bend[:m_red, :m_red] = bend_q
    h_dim = h_data + params.lambda_bend * h_bend + 1e-10 * np.eye(dim_block)

    def unpack(theta: np.ndarray) -> np.ndarray:
        """Deformed vertex positions for stacked parameters."""
        th = theta.reshape(3, dim_block)
        return basis @ th.T

    def bend_energy(theta: np.ndarray) -> float:
        th = theta.reshape(3, dim_block)
        u = th[:, :m_red]
        return float(np.einsum("dj,jk,dk->", u, bend_q, u))

    def objective(theta: np.ndarray, corr: np.ndarray) -> float:
        x = unpack(theta)
        data = float(np.mean(np.sum((x - corr) ** 2, axis=1)))
        vol = signed_volume(TriMesh(x, faces)) / v_target - 1.0
        return data + params.lambda_bend * bend_energy(theta) + params.lambda_vol * vol * vol

    # start from the identity deformation (in pre-aligned coordinates)
    theta = np.zeros(3 * dim_block)
    th0 = theta.reshape(3, dim_block)
    th0[:, m_red] = 0.0
    th0[0, m_red + 1] = 1.0
    th0[1, m_red + 2] = 1.0
    th0[2, m_red + 3] = 1.0
    theta = th0.ravel()

    trace: list[float] = []
    rms_prev = np.inf
    surface_rms = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iters + 1):
        x = unpack(theta)
        corr, dist, _ = prox.closest(x)
        surface_rms = float(np.sqrt(np.mean(dist ** 2)))
        trace.append(objective(theta, corr))
        if abs(rms_prev - surface_rms) < params.tol_mm:
            converged = True
            break
        rms_prev = surface_rms

        # normal equations: block-diagonal data+bend, volume rank-one coupling
        h = np.zeros((3 * dim_block, 3 * dim_block))
        rhs = np.zeros(3 * dim_block)
        for d in range(3):
            sl = slice(d * dim_block, (d + 1) * dim_block)
            h[sl, sl] = h_dim
            rhs[sl] = basis.T @ corr[:, d] / n
        if params.lambda_vol > 0:
            vol0 = signed_volume(TriMesh(x, faces))
            gv = _volume_gradient(x, faces)           # (n, 3)
            g_theta = np.concatenate([basis.T @ gv[:, d] for d in range(3)])
            beta = params.lambda_vol / (v_target ** 2)
            h += beta * np.outer(g_theta, g_theta)
            rhs += beta * g_theta * (v_target - vol0 + g_theta @ theta)

        theta_new = np.linalg.solve(h, rhs)

        # backtracking keeps the true (nonlinear-volume) objective monotone
        base = trace[-1]
        step = theta_new - theta
        for alpha in (1.0, 0.5, 0.25, 0.125):
            cand = theta + alpha * step
            if objective(cand, corr) <= base:
                theta = cand
                break

    x = unpack(theta)
    corr, dist, _ = prox.closest(x)
    surface_rms = float(np.sqrt(np.mean(dist ** 2)))
    vol_err = signed_volume(TriMesh(x, faces)) / v_target - 1.0

    # fold the pre-alignment into the field: control points move back to the
    # original source frame (the kernel is rigid-invariant), the affine part
    # composes with the pre-alignment
    th = theta.reshape(3, dim_block)
    w = nullb @ th[:, :m_red].T            # (m, 3)
    a_lin = th[:, m_red + 1:]              # (3, 3)
    a_off = th[:, m_red]
    ctrl_orig = (ctrl - t0) @ rot0
    affine = np.hstack([a_lin @ rot0, (a_lin @ t0 + a_off)[:, None]])
    fld = DeformationField(ctrl_orig, w, affine)
    return RegistrationResult(fld, surface_rms, float(vol_err), iterations,
                              converged, np.array(trace))
