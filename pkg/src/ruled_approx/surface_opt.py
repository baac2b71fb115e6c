"""Final alignment of the piecewise ruled surface to the reference.

The ruling endpoints double as the vertices of the seam and boundary
polylines, so a single point pool drives both the rulings and the patch
outlines.  All point positions are optimized under three pulls: sample
closeness to the reference, low bending across the rulings of each
strip, and smoothness of the boundary polylines.  The problem is a
sparse nonlinear least-squares solve with a dogleg trust region;
closest-point footpoints are frozen during each inner solve and
refreshed between solves, which keeps every residual smooth while the
recorded objective still decreases monotonically (a refresh can only
shorten closeness distances).

Sample weights (alpha, beta, eta) and their normalizers are computed
once from the initial positions and never updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .bvh import ClosestPointQuery
from .ruled_surface import PiecewiseRuledSurface, densify_rulings

__all__ = [
    "FinalProblem",
    "ruling_samples",
    "normal_curvature_sample",
    "boundary_curvature",
    "build_final_problem",
    "optimize_surface",
    "triangulate_strips",
    "export_strips_obj",
    "densify_rulings",
]

# (closeness of ruling samples, closeness of polyline vertices,
#  cross-ruling bending, boundary smoothness).  The bending weights are
# deliberately small: the closeness terms are mean squared distances
# while the curvature terms are mean squared curvatures, so on a
# unit-diagonal model comparable influence needs lambda3, lambda4 well
# below the distance scale.
DEFAULT_LAMBDAS = (1.0, 1.0, 1e-6, 1e-6)

_PARALLEL_TOL = 1e-9


def ruling_samples(surface, m: int = 8):
    """Uniform interior samples on every ruling.

    Sample k sits on ruling ruling_index[k] at the fixed convex
    combination weights[k] of its two endpoints; the parameters are
    i/(m+1) for i = 1..m, so endpoints (already polyline vertices) are
    never duplicated.  Returns (ruling_index, weights).
    """
    if int(m) != m or m < 1:
        raise ValueError("per-ruling sample count must be a positive integer")
    m = int(m)
    nr = surface.n_rulings
    t = np.arange(1, m + 1, dtype=np.float64) / (m + 1.0)
    ridx = np.repeat(np.arange(nr, dtype=np.int64), m)
    tt = np.tile(t, nr)
    return ridx, np.stack([1.0 - tt, tt], axis=1)


def _ruling_neighbors(surface):
    """Previous/next ruling id per ruling in chain order, -1 where absent."""
    nr = surface.n_rulings
    prev_r = np.full(nr, -1, dtype=np.int64)
    next_r = np.full(nr, -1, dtype=np.int64)
    for ch in surface.chains:
        ids = np.asarray(ch.rulings, dtype=np.int64)
        if len(ids) < 2:
            continue
        prev_r[ids[1:]] = ids[:-1]
        next_r[ids[:-1]] = ids[1:]
        if ch.closed and len(ids) > 2:
            prev_r[ids[0]] = ids[-1]
            next_r[ids[-1]] = ids[0]
    return prev_r, next_r


def boundary_curvature(b_minus, b, b_plus) -> float:
    """Discrete curvature magnitude at b between its polyline neighbors.

    Difference of the unit tangents of the two incident segments over
    their mean length; zero exactly when the three points are collinear
    with b between its neighbors.
    """
    bm = np.asarray(b_minus, dtype=np.float64)
    bb = np.asarray(b, dtype=np.float64)
    bp = np.asarray(b_plus, dtype=np.float64)
    e1 = bb - bm
    e2 = bp - bb
    n1 = float(np.linalg.norm(e1))
    n2 = float(np.linalg.norm(e2))
    if n1 <= 0.0 or n2 <= 0.0:
        raise ValueError("coincident neighbor vertices")
    return float(np.linalg.norm(e2 / n2 - e1 / n1) / (0.5 * (n1 + n2)))


def _plane_line_hit(s, u_hat, seg):
    # intersection of the plane (s, u_hat) with the line through seg
    d = seg[1] - seg[0]
    den = float(d @ u_hat)
    if abs(den) <= _PARALLEL_TOL * max(float(np.linalg.norm(d)), 1e-300):
        return None
    t = float((s - seg[0]) @ u_hat) / den
    return seg[0] + t * d


def normal_curvature_sample(surface, ruling: int, t: float):
    """Bending of the strip across its rulings at one sample point.

    The sample sits at parameter t on the ruling.  The cutting plane
    through it orthogonal to the ruling meets the two neighboring ruling
    lines of the same chain at s+ and s-, and the discrete curvature of
    s- s s+ is returned.  None signals a skipped sample (a neighbor line
    parallel to the cutting plane).  A ruling without a neighbor on both
    sides is rejected.
    """
    prev_r, next_r = _ruling_neighbors(surface)
    jp, jn = int(prev_r[ruling]), int(next_r[ruling])
    if jp < 0 or jn < 0:
        raise ValueError("ruling needs a neighbor on both sides for curvature")
    P = surface.points
    a0, a1 = P[surface.rulings[ruling]]
    u = a1 - a0
    nu = float(np.linalg.norm(u))
    if nu <= 0.0:
        raise ValueError("degenerate ruling")
    u_hat = u / nu
    s = (1.0 - t) * a0 + t * a1
    sp = _plane_line_hit(s, u_hat, P[surface.rulings[jn]])
    sm = _plane_line_hit(s, u_hat, P[surface.rulings[jp]])
    if sp is None or sm is None:
        return None
    return boundary_curvature(sm, s, sp)


@dataclass
class FinalProblem:
    """Frozen sampling structure and weights for the final alignment.

    All index arrays refer to the point pool of the source surface; the
    weights alpha/beta/eta and the normalizers M1..M4 are fixed at
    construction (initial positions) and the sqrt-weight caches bake the
    lambda factors in, so residual evaluation never recomputes them.
    """

    surface: PiecewiseRuledSurface
    points0: np.ndarray
    rulings: np.ndarray
    samp_r: np.ndarray                  # (ns,) ruling id per sample
    samp_w: np.ndarray                  # (ns, 2) convex endpoint weights
    kr_sample: np.ndarray               # (nkr,) sample index, both neighbors exist
    kr_prev: np.ndarray                 # (nkr,) ruling ids
    kr_next: np.ndarray
    kb_ids: np.ndarray                  # (nkb, 3) point ids (prev, mid, next)
    on_boundary: np.ndarray             # (np,) project to reference boundary
    alpha_r: np.ndarray
    alpha_b: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    M1: float
    M2: float
    M3: float
    M4: float
    lambdas: tuple = DEFAULT_LAMBDAS
    stats: dict = dfield(default_factory=dict)

    def __post_init__(self):
        self._p0 = self.rulings[self.samp_r, 0]
        self._p1 = self.rulings[self.samp_r, 1]
        ks = self.kr_sample
        self._kr_p0 = self._p0[ks]
        self._kr_p1 = self._p1[ks]
        self._kr_q0 = self.rulings[self.kr_prev, 0]
        self._kr_q1 = self.rulings[self.kr_prev, 1]
        self._kr_r0 = self.rulings[self.kr_next, 0]
        self._kr_r1 = self.rulings[self.kr_next, 1]
        self._kr_w = self.samp_w[ks]
        lo = self.points0.min(axis=0) if len(self.points0) else np.zeros(3)
        hi = self.points0.max(axis=0) if len(self.points0) else np.zeros(3)
        self._scale = max(float(np.linalg.norm(hi - lo)), 1e-300)
        l1, l2, l3, l4 = self.lambdas
        self._sqA = np.sqrt(l1 * self.alpha_r / self.M1)
        self._sqB = np.sqrt(l2 * self.alpha_b / self.M2)
        self._sqC = np.sqrt(l3 * self.beta / self.M3)
        self._sqD = np.sqrt(l4 * self.eta / self.M4)
        self._spars = None

    @property
    def n_points(self) -> int:
        return len(self.points0)

    @property
    def n_samples(self) -> int:
        return len(self.samp_r)

    def sample_positions(self, P: np.ndarray) -> np.ndarray:
        return (self.samp_w[:, :1] * P[self._p0]
                + self.samp_w[:, 1:] * P[self._p1])

    def footpoints(self, query: ClosestPointQuery, P: np.ndarray):
        """Closest reference points for all samples and all vertices.

        Vertices on boundary polylines project onto the reference
        boundary when it has one, everything else onto the triangles.
        """
        foot_r, _, _ = query.surface(self.sample_positions(P))
        foot_b, _, _ = query.surface(P)
        if query.has_boundary and np.any(self.on_boundary):
            bpts, _, _ = query.boundary(P[self.on_boundary])
            foot_b[self.on_boundary] = bpts
        return foot_r, foot_b

    def _kr_eval(self, P: np.ndarray):
        """All cross-ruling curvatures at once; invalid entries are 0.

        Invalid means a neighbor line parallel to the cutting plane or a
        collapsed arm (plane hit on top of the sample).
        """
        nkr = len(self.kr_sample)
        if nkr == 0:
            return np.zeros(0), np.zeros(0, dtype=bool)
        A = P[self._kr_p0]
        B = P[self._kr_p1]
        s = self._kr_w[:, :1] * A + self._kr_w[:, 1:] * B
        u = B - A
        un = np.linalg.norm(u, axis=1)
        ok = un > 0.0
        u_hat = u / np.where(ok, un, 1.0)[:, None]

        def hit(C0, C1):
            d = C1 - C0
            dn = np.linalg.norm(d, axis=1)
            den = np.einsum("ij,ij->i", d, u_hat)
            par = np.abs(den) <= _PARALLEL_TOL * np.maximum(dn, 1e-300)
            tt = np.einsum("ij,ij->i", s - C0, u_hat) / np.where(par, 1.0, den)
            return C0 + tt[:, None] * d, par

        sp, par_n = hit(P[self._kr_r0], P[self._kr_r1])
        sm, par_p = hit(P[self._kr_q0], P[self._kr_q1])
        e1 = s - sm
        e2 = sp - s
        n1 = np.linalg.norm(e1, axis=1)
        n2 = np.linalg.norm(e2, axis=1)
        floor = 1e-14 * self._scale
        valid = ok & ~par_n & ~par_p & (n1 > floor) & (n2 > floor)
        n1s = np.where(n1 > floor, n1, 1.0)
        n2s = np.where(n2 > floor, n2, 1.0)
        K = (np.linalg.norm(e2 / n2s[:, None] - e1 / n1s[:, None], axis=1)
             / (0.5 * (n1 + n2) + 1e-300))
        return np.where(valid, K, 0.0), valid

    def _kb_eval(self, P: np.ndarray) -> np.ndarray:
        if len(self.kb_ids) == 0:
            return np.zeros(0)
        e1 = P[self.kb_ids[:, 1]] - P[self.kb_ids[:, 0]]
        e2 = P[self.kb_ids[:, 2]] - P[self.kb_ids[:, 1]]
        n1 = np.linalg.norm(e1, axis=1)
        n2 = np.linalg.norm(e2, axis=1)
        floor = 1e-14 * self._scale
        valid = (n1 > floor) & (n2 > floor)
        n1s = np.where(valid, n1, 1.0)
        n2s = np.where(valid, n2, 1.0)
        K = (np.linalg.norm(e2 / n2s[:, None] - e1 / n1s[:, None], axis=1)
             / (0.5 * (n1 + n2) + 1e-300))
        return np.where(valid, K, 0.0)

    def residuals(self, P: np.ndarray, foot_r: np.ndarray,
                  foot_b: np.ndarray) -> np.ndarray:
        S = self.sample_positions(P)
        parts = [
            (self._sqA[:, None] * (S - foot_r)).ravel(),
            (self._sqB[:, None] * (P - foot_b)).ravel(),
            self._sqC * self._kr_eval(P)[0],
            self._sqD * self._kb_eval(P),
        ]
        return np.concatenate(parts)

    def energies(self, P: np.ndarray, foot_r: np.ndarray, foot_b: np.ndarray):
        """(E_disp, E_rul, E_bdr) without the lambda3/lambda4 factors."""
        l1, l2, _, _ = self.lambdas
        S = self.sample_positions(P)
        dr = np.einsum("ij,ij->i", S - foot_r, S - foot_r)
        db = np.einsum("ij,ij->i", P - foot_b, P - foot_b)
        e_disp = (l1 / self.M1 * float(self.alpha_r @ dr)
                  + l2 / self.M2 * float(self.alpha_b @ db))
        K, _ = self._kr_eval(P)
        e_rul = float(self.beta @ (K * K)) / self.M3
        Kb = self._kb_eval(P)
        e_bdr = float(self.eta @ (Kb * Kb)) / self.M4
        return e_disp, e_rul, e_bdr

    def objective(self, P: np.ndarray, foot_r: np.ndarray,
                  foot_b: np.ndarray) -> float:
        e_disp, e_rul, e_bdr = self.energies(P, foot_r, foot_b)
        return e_disp + self.lambdas[2] * e_rul + self.lambdas[3] * e_bdr

    def jac_sparsity(self):
        """Structural nonzero pattern of the residual Jacobian.

        Closeness rows couple coordinates independently (2 resp. 1
        nonzeros); a curvature row touches every coordinate of the 6
        (cross-ruling) or 3 (boundary) points it reads.
        """
        if self._spars is not None:
            return self._spars
        ns, npts = self.n_samples, self.n_points
        nkr, nkb = len(self.kr_sample), len(self.kb_ids)
        c3 = np.arange(3)
        rows = [
            np.broadcast_to((3 * np.arange(ns)[:, None] + c3)[:, :, None],
                            (ns, 3, 2)).ravel(),
            3 * ns + np.arange(3 * npts),
        ]
        cols = [
            np.stack([3 * self._p0[:, None] + c3,
                      3 * self._p1[:, None] + c3], axis=2).ravel(),
            np.arange(3 * npts),
        ]
        if nkr:
            pts6 = np.stack([self._kr_p0, self._kr_p1, self._kr_q0,
                             self._kr_q1, self._kr_r0, self._kr_r1], axis=1)
            rows.append(np.repeat(3 * ns + 3 * npts + np.arange(nkr), 18))
            cols.append((3 * pts6[:, :, None] + c3).ravel())
        if nkb:
            rows.append(np.repeat(3 * ns + 3 * npts + nkr + np.arange(nkb), 9))
            cols.append((3 * self.kb_ids[:, :, None] + c3).ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        n_res = 3 * ns + 3 * npts + nkr + nkb
        self._spars = coo_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(n_res, 3 * npts)).tocsr()
        self._spars.data[:] = 1.0
        return self._spars


def build_final_problem(surface: PiecewiseRuledSurface, m: int = 8,
                        k_neighbors: int = 4,
                        lambdas=DEFAULT_LAMBDAS) -> FinalProblem:
    """Freeze samples, curvature stencils and weights for a surface.

    alpha weights are squared mean distances to the k nearest neighbors
    in the union of ruling samples and polyline vertices; beta mixes the
    two nearest samples on the same ruling with the nearest sample on
    each neighbor ruling; eta is the mean incident segment length of a
    polyline vertex.  Everything is evaluated at the initial positions.
    """
    if surface.n_rulings == 0:
        raise ValueError("surface has no rulings to optimize")
    P0 = np.array(surface.points, dtype=np.float64)
    npts = len(P0)
    rulings = np.asarray(surface.rulings, dtype=np.int64)
    samp_r, samp_w = ruling_samples(surface, m)
    m = int(m)
    ns = len(samp_r)
    nr = surface.n_rulings

    prev_r, next_r = _ruling_neighbors(surface)
    rmask = (prev_r >= 0) & (next_r >= 0)
    elig = rmask[samp_r]
    kr_sample = np.nonzero(elig)[0].astype(np.int64)
    kr_prev = prev_r[samp_r[kr_sample]]
    kr_next = next_r[samp_r[kr_sample]]

    kb = []
    for pl in surface.polylines:
        ids = np.asarray(pl.point_ids, dtype=np.int64)
        n = len(ids)
        if n < 3:
            continue
        if pl.closed:
            kb.extend((ids[i - 1], ids[i], ids[(i + 1) % n]) for i in range(n))
        else:
            kb.extend((ids[i - 1], ids[i], ids[i + 1]) for i in range(1, n - 1))
    kb_ids = np.array(kb, dtype=np.int64).reshape(-1, 3)

    on_boundary = np.zeros(npts, dtype=bool)
    for pl in surface.polylines:
        if pl.kind == "boundary":
            on_boundary[pl.point_ids] = True

    S0 = (samp_w[:, :1] * P0[rulings[samp_r, 0]]
          + samp_w[:, 1:] * P0[rulings[samp_r, 1]])
    U = np.vstack([S0, P0])
    scale = max(float(np.linalg.norm(U.max(axis=0) - U.min(axis=0))), 1e-300)
    kq = min(int(k_neighbors), len(U) - 1)
    if kq < 1:
        raise ValueError("not enough sample points for neighbor weights")
    dist, _ = cKDTree(U).query(U, k=kq + 1)
    alpha = np.maximum(dist[:, 1:].mean(axis=1) ** 2, (1e-12 * scale) ** 2)
    alpha_r, alpha_b = alpha[:ns], alpha[ns:]

    # beta per eligible sample, in kr_sample order (rulings ascending,
    # samples along each ruling in parameter order)
    S3 = S0.reshape(nr, m, 3)
    ers = np.nonzero(rmask)[0]
    if len(ers):
        if m > 1:
            D = np.linalg.norm(S3[ers][:, :, None, :]
                               - S3[ers][:, None, :, :], axis=-1)
            ii = np.arange(m)
            D[:, ii, ii] = np.inf
            same = np.sort(D, axis=2)[:, :, :min(2, m - 1)]
        else:
            same = np.zeros((len(ers), m, 0))
        near_p = np.linalg.norm(S3[ers][:, :, None, :]
                                - S3[prev_r[ers]][:, None, :, :],
                                axis=-1).min(axis=2)
        near_n = np.linalg.norm(S3[ers][:, :, None, :]
                                - S3[next_r[ers]][:, None, :, :],
                                axis=-1).min(axis=2)
        parts = np.concatenate(
            [same, near_p[:, :, None], near_n[:, :, None]], axis=2)
        beta = np.maximum(parts.mean(axis=2).ravel() ** 2,
                          (1e-12 * scale) ** 2)
    else:
        beta = np.zeros(0)
    if len(beta) != len(kr_sample):
        raise AssertionError("beta ordering out of sync with samples")

    if len(kb_ids):
        a1 = np.linalg.norm(P0[kb_ids[:, 1]] - P0[kb_ids[:, 0]], axis=1)
        a2 = np.linalg.norm(P0[kb_ids[:, 2]] - P0[kb_ids[:, 1]], axis=1)
        eta = np.maximum(0.5 * (a1 + a2), 1e-12 * scale)
    else:
        eta = np.zeros(0)

    problem = FinalProblem(
        surface=surface,
        points0=P0,
        rulings=rulings,
        samp_r=samp_r,
        samp_w=samp_w,
        kr_sample=kr_sample,
        kr_prev=kr_prev,
        kr_next=kr_next,
        kb_ids=kb_ids,
        on_boundary=on_boundary,
        alpha_r=alpha_r,
        alpha_b=alpha_b,
        beta=beta,
        eta=eta,
        M1=float(alpha_r.sum()) if ns else 1.0,
        M2=float(alpha_b.sum()) if npts else 1.0,
        M3=float(beta.sum()) if len(beta) else 1.0,
        M4=float(eta.sum()) if len(eta) else 1.0,
        lambdas=tuple(float(v) for v in lambdas),
    )
    _, valid0 = problem._kr_eval(P0)
    problem.stats.update(
        n_samples=ns,
        n_curvature_samples=len(kr_sample),
        n_boundary_curvatures=len(kb_ids),
        kr_skipped_initial=int((~valid0).sum()),
    )
    return problem


def optimize_surface(problem: FinalProblem, reference,
                     gtol: float = 1e-8, max_iter: int = 200,
                     max_outer: int = 30, xtol: float = 1e-12,
                     ftol: float = 1e-12) -> PiecewiseRuledSurface:
    """Minimize the alignment objective over all polyline vertices.

    reference is the target mesh (or a prebuilt closest-point query on
    it).  Each outer round freezes the footpoints and runs a dogleg
    trust-region least-squares solve; rounds repeat until the gradient
    norm drops below gtol, progress stalls, or the shared iteration
    budget runs out.  Curvature rows whose stencil degenerates during a
    solve contribute zero until they recover.  Returns a copy of the
    source surface with optimized positions; solver diagnostics land in
    its stats.
    """
    query = (reference if isinstance(reference, ClosestPointQuery)
             else ClosestPointQuery(reference))
    x = problem.points0.ravel().copy()
    spars = problem.jac_sparsity()
    history = []
    nfev_total = 0
    outer_done = 0
    grad_norm = np.inf
    stop = "outer round limit"
    for _ in range(max_outer):
        P = x.reshape(-1, 3)
        foot_r, foot_b = problem.footpoints(query, P)
        obj0 = problem.objective(P, foot_r, foot_b)
        history.append(obj0)
        remaining = max_iter - nfev_total
        if remaining <= 0:
            stop = "iteration budget"
            break

        def fun(xx, fr=foot_r, fb=foot_b):
            return problem.residuals(xx.reshape(-1, 3), fr, fb)

        res = least_squares(
            fun, x, jac_sparsity=spars, method="dogbox", tr_solver="lsmr",
            tr_options={"damp": 1e-12}, gtol=gtol, xtol=xtol, ftol=ftol,
            max_nfev=remaining)
        nfev_total += res.nfev
        moved = float(np.linalg.norm(res.x - x))
        x = res.x
        grad_norm = float(res.optimality)
        obj1 = 2.0 * float(res.cost)
        history.append(obj1)
        outer_done += 1
        if res.status == 0:
            stop = "iteration budget"
            break
        if grad_norm <= gtol and moved <= 10.0 * xtol * max(1.0, float(np.linalg.norm(x))):
            stop = "gradient"
            break
        if obj0 - obj1 <= ftol * max(obj0, 1e-30):
            stop = "stalled"
            break

    P = x.reshape(-1, 3)
    out = problem.surface.copy()
    out.points = P
    _, valid = problem._kr_eval(P)
    out.stats.update(
        final_objective=history[-1] if history else np.nan,
        objective_history=[float(v) for v in history],
        optimizer_iterations=int(nfev_total),
        outer_rounds=int(outer_done),
        stop_reason=stop,
        gradient_norm=grad_norm,
        kr_skipped=int((~valid).sum()),
        displacement_max=float(
            np.linalg.norm(P - problem.points0, axis=1).max()),
    )
    problem.stats.update(out.stats)
    return out


def triangulate_strips(surface: PiecewiseRuledSurface):
    """Two triangles per adjacent ruling pair, over the surface points.

    Returns (vertices, faces); degenerate corner triangles (rulings
    sharing an endpoint) are dropped.
    """
    tris = []
    for ch in surface.chains:
        ids = np.asarray(ch.rulings, dtype=np.int64)
        pairs = list(zip(ids[:-1], ids[1:]))
        if ch.closed and len(ids) > 2:
            pairs.append((ids[-1], ids[0]))
        for j0, j1 in pairs:
            a0, b0 = surface.rulings[j0]
            a1, b1 = surface.rulings[j1]
            tris.append((a0, b0, b1))
            tris.append((a0, b1, a1))
    faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    keep = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2]))
    return surface.points.copy(), faces[keep]


def export_strips_obj(surface: PiecewiseRuledSurface, path) -> None:
    V, F = triangulate_strips(surface)
    with open(path, "w") as fh:
        for v in V:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in F:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
