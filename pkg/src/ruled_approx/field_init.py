"""Smooth initialization of the ruling direction field.

Directions are encoded as 2D coordinates y_f in a per-face orthonormal
basis D_f and solved for by minimizing

    E_smo + mu1 E_unit + mu2 sum_{K<=0} E_align + mu3 sum_{K>0} E_align

with a majorization-minimization loop. E_smo compares adjacent directions
in shared hinge bases (parallel transport across each interior edge),
E_unit pulls each y_f to unit length, and E_align pushes y_f orthogonal to
a small per-face target set: the maximal-curvature principal direction
where K >= 0, or the two asymptotic-line normals where K < 0. The result
aligns with the direction of smallest normal curvature while staying
smooth. gamma starts at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriangleMesh
from .geometry import FaceFrames, mesh_face_frames, estimate_principal, PrincipalEstimate
from .ruling_field import RulingField

MU1_RAMP = (1.0, np.sqrt(10.0), 10.0)
MU2_RAMP = (0.1, 1.0, 10.0)
MU3 = 0.01


def local_bases(frames: FaceFrames):
    """Per-face D_f = (t1, t2): unit first edge and its in-plane normal."""
    t1 = frames.d1 / np.linalg.norm(frames.d1, axis=1)[:, None]
    t2 = np.cross(frames.n, t1)
    return t1, t2


@dataclass
class AlignTargets:
    """Per-face alignment data in local D_f coordinates.

    vecs[f] has shape (1, 2) where K >= 0 (the e1 coordinates) and (2, 2)
    where K < 0 (normals of the two asymptotic lines). positive marks the
    K > 0 faces, which take the small constant weight.
    """

    vecs: list
    positive: np.ndarray
    e1y: np.ndarray
    e2y: np.ndarray


def build_targets(mesh: TriangleMesh, frames: FaceFrames | None = None,
                  principal: PrincipalEstimate | None = None) -> AlignTargets:
    if frames is None:
        frames = mesh_face_frames(mesh)
    if principal is None:
        principal = estimate_principal(mesh)
    t1, t2 = local_bases(frames)
    nf = mesh.n_faces
    e1y = np.stack([np.einsum("ij,ij->i", principal.e1, t1),
                    np.einsum("ij,ij->i", principal.e1, t2)], axis=1)
    e2y = np.stack([np.einsum("ij,ij->i", principal.e2, t1),
                    np.einsum("ij,ij->i", principal.e2, t2)], axis=1)
    K = principal.K
    vecs = []
    for f in range(nf):
        if K[f] < 0.0:
            # asymptotic directions a = cos(phi) e1 + sin(phi) e2 with
            # k1 cos^2 + k2 sin^2 = 0; store their in-plane normals
            phi = np.arctan(np.sqrt(-principal.k1[f] / principal.k2[f]))
            pair = []
            for sgn in (1.0, -1.0):
                c, s = np.cos(sgn * phi), np.sin(sgn * phi)
                pair.append(-s * e1y[f] + c * e2y[f])
            vecs.append(np.asarray(pair))
        else:
            vecs.append(e1y[f][None, :])
    return AlignTargets(vecs=vecs, positive=K > 0.0, e1y=e1y, e2y=e2y)


def smoothness_operator(mesh: TriangleMesh, frames: FaceFrames) -> sp.csr_matrix:
    """Sparse T with E_smo = ||T Y||^2 for Y the stacked (y_f) vector."""
    t1, t2 = local_bases(frames)
    rows, cols, vals = [], [], []
    row = 0
    for e in mesh.interior_edges:
        va, vb = mesh.edges[e]
        ev = mesh.vertices[vb] - mesh.vertices[va]
        e_hat = ev / np.linalg.norm(ev)
        fi, fj = (int(x) for x in mesh.edge_faces[e])
        for f, sign in ((fi, 1.0), (fj, -1.0)):
            B = np.stack([e_hat, np.cross(e_hat, frames.n[f])], axis=1)
            D = np.stack([t1[f], t2[f]], axis=1)
            M = B.T @ D
            for i in range(2):
                for j in range(2):
                    rows.append(row + i)
                    cols.append(2 * f + j)
                    vals.append(sign * M[i, j])
        row += 2
    nf = mesh.n_faces
    return sp.csr_matrix((vals, (rows, cols)), shape=(row, 2 * nf))


def energy_terms(T: sp.csr_matrix, targets: AlignTargets, Y: np.ndarray):
    """(E_smo, E_unit, E_align_np, E_align_p) at Y (shape (nf, 2))."""
    y = Y.reshape(-1)
    e_smo = float(np.sum((T @ y) ** 2))
    norms = np.linalg.norm(Y, axis=1)
    e_unit = float(np.sum((norms - 1.0) ** 2))
    e_np = 0.0
    e_p = 0.0
    for f, vf in enumerate(targets.vecs):
        val = np.min((vf @ Y[f]) ** 2)
        if targets.positive[f]:
            e_p += val
        else:
            e_np += val
    return e_smo, e_unit, float(e_np), float(e_p)


def total_energy(T, targets, Y, mu1, mu2, mu3=MU3) -> float:
    e_smo, e_unit, e_np, e_p = energy_terms(T, targets, Y)
    return e_smo + mu1 * e_unit + mu2 * e_np + mu3 * e_p


def _align_blocks(targets: AlignTargets, Y: np.ndarray | None, mu2, mu3):
    """Per-face 2x2 alignment blocks. With Y given, negative-K faces use
    the surrogate built from the currently closest target vector."""
    nf = len(targets.vecs)
    blocks = np.zeros((nf, 2, 2))
    for f, vf in enumerate(targets.vecs):
        w = mu3 if targets.positive[f] else mu2
        if len(vf) == 1:
            t = vf[0]
        else:
            t = vf[int(np.argmin((vf @ Y[f]) ** 2))]
        blocks[f] += w * np.outer(t, t)
    return blocks


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    nf = blocks.shape[0]
    rows = np.repeat(2 * np.arange(nf), 4) + np.tile([0, 0, 1, 1], nf)
    cols = np.repeat(2 * np.arange(nf), 4) + np.tile([0, 1, 0, 1], nf)
    return sp.csr_matrix((blocks.reshape(-1), (rows, cols)),
                         shape=(2 * nf, 2 * nf))


def spectral_init(T: sp.csr_matrix, targets: AlignTargets,
                  mu2: float = MU2_RAMP[0], mu3: float = MU3) -> np.ndarray:
    """Smallest-eigenvector start: minimize a fully quadratic proxy (unit
    terms dropped, negative-K alignment replaced by the e1 penalty) over
    unit vectors, then normalize each face block."""
    nf = len(targets.vecs)
    blocks = np.zeros((nf, 2, 2))
    for f in range(nf):
        w = mu3 if targets.positive[f] else mu2
        t = targets.e1y[f]
        blocks[f] = w * np.outer(t, t)
    M = (T.T @ T + _block_diag(blocks)).tocsc()
    Yhat = _smallest_eigvec(M)
    Y = Yhat.reshape(nf, 2)
    norms = np.linalg.norm(Y, axis=1)
    ok = norms > 1e-12
    out = np.empty_like(Y)
    out[ok] = Y[ok] / norms[ok, None]
    out[~ok] = targets.e2y[~ok]
    return out


def _smallest_eigvec(M: sp.csc_matrix, iters: int = 200, tol: float = 1e-12):
    """Inverse power iteration with a fixed deterministic start."""
    n = M.shape[0]
    shift = 1e-10 * (abs(M.diagonal()).mean() + 1.0)
    lu = spla.splu((M + shift * sp.identity(n, format="csc")).tocsc())
    x = np.ones(n)
    x[1::2] = 0.5
    x /= np.linalg.norm(x)
    for _ in range(iters):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        if np.linalg.norm(y - np.sign(y @ x) * x) < tol:
            x = y
            break
        x = y
    return x


@dataclass
class MMDiagnostics:
    energies: list = dc_field(default_factory=list)
    surrogate_gaps: list = dc_field(default_factory=list)
    stage_starts: list = dc_field(default_factory=list)
    iterations: int = 0

    def stage_slices(self):
        bounds = self.stage_starts + [len(self.energies)]
        return [slice(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def mm_solve(T: sp.csr_matrix, targets: AlignTargets, Y0: np.ndarray,
             mu1: float, mu2: float, mu3: float = MU3,
             tol: float = 1e-8, max_iter: int = 200,
             diagnostics: MMDiagnostics | None = None) -> np.ndarray:
    """Majorize-minimize loop for one weight stage.

    Each step solves the convex quadratic surrogate (unit term linearized
    at Y^k, negative-K alignment pinned to the nearest target) and is
    guaranteed not to increase the true energy.
    """
    nf = Y0.shape[0]
    Q_smo = (T.T @ T).tocsr()
    Y = Y0.copy()
    prev = total_energy(T, targets, Y, mu1, mu2, mu3)
    if diagnostics is not None:
        diagnostics.stage_starts.append(len(diagnostics.energies))
        diagnostics.energies.append(prev)
    eye = sp.identity(2 * nf, format="csr")
    for it in range(max_iter):
        norms = np.linalg.norm(Y, axis=1)
        norms = np.maximum(norms, 1e-300)
        Yhat = Y / norms[:, None]
        blocks = _align_blocks(targets, Y, mu2, mu3)
        A = (Q_smo + mu1 * eye + _block_diag(blocks)).tocsc()
        rhs = mu1 * Yhat.reshape(-1)
        if diagnostics is not None:
            # surrogate value at the expansion point must equal the energy
            ys = Y.reshape(-1)
            sur = float(ys @ (Q_smo @ ys)) \
                + mu1 * float(np.sum((Y - Yhat) ** 2)) \
                + float(ys @ (_block_diag(blocks) @ ys))
            diagnostics.surrogate_gaps.append(abs(sur - prev))
        Y = spla.spsolve(A, rhs).reshape(nf, 2)
        cur = total_energy(T, targets, Y, mu1, mu2, mu3)
        if diagnostics is not None:
            diagnostics.energies.append(cur)
            diagnostics.iterations = it + 1
        if abs(prev - cur) <= tol * max(1.0, abs(prev)):
            prev = cur
            break
        prev = cur
    return Y


def init_ruling_field(mesh: TriangleMesh, frames: FaceFrames | None = None,
                      principal: PrincipalEstimate | None = None,
                      mu1_ramp=MU1_RAMP, mu2_ramp=MU2_RAMP, mu3: float = MU3,
                      tol: float = 1e-8, max_iter: int = 200,
                      diagnostics: MMDiagnostics | None = None) -> RulingField:
    """Full initialization: spectral start, MM with a weight ramp, then
    conversion of the unit directions to (a, b) coefficients. gamma = 0."""
    if frames is None:
        frames = mesh_face_frames(mesh)
    targets = build_targets(mesh, frames, principal)
    T = smoothness_operator(mesh, frames)
    Y = spectral_init(T, targets, mu2=mu2_ramp[0], mu3=mu3)
    for mu1, mu2 in zip(mu1_ramp, mu2_ramp):
        Y = mm_solve(T, targets, Y, mu1, mu2, mu3, tol=tol, max_iter=max_iter,
                     diagnostics=diagnostics)
    t1, t2 = local_bases(frames)
    norms = np.linalg.norm(Y, axis=1)
    ok = norms > 1e-12
    Y[ok] = Y[ok] / norms[ok, None]
    Y[~ok] = targets.e2y[~ok]
    r = Y[:, 0:1] * t1 + Y[:, 1:2] * t2
    a, b = _to_edge_coeffs(frames, r)
    return RulingField(a=a, b=b, gamma=np.zeros(mesh.n_faces))


def _to_edge_coeffs(frames: FaceFrames, r: np.ndarray):
    """Solve a d1 + b d2 = r per face (r must be tangent)."""
    g11 = np.einsum("ij,ij->i", frames.d1, frames.d1)
    g12 = np.einsum("ij,ij->i", frames.d1, frames.d2)
    g22 = np.einsum("ij,ij->i", frames.d2, frames.d2)
    r1 = np.einsum("ij,ij->i", frames.d1, r)
    r2 = np.einsum("ij,ij->i", frames.d2, r)
    det = g11 * g22 - g12 * g12
    a = (g22 * r1 - g12 * r2) / det
    b = (g11 * r2 - g12 * r1) / det
    return a, b
