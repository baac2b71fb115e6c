"""Evaluation of a fitted piecewise ruled surface against its reference mesh.

Distances are measured one-sided, from sample points on the result surface
to the reference, and reported raw (they scale with the inputs; the pipeline
works on unit-diagonal meshes, so there they read as fractions of the
diagonal).  Seam length comes in two flavours: the native one sums the seam
polylines of the result, the curvature-based one sums reference edges whose
endpoints both carry Gaussian curvature magnitude above a threshold.
"""

from dataclasses import dataclass, field

import numpy as np

from .bvh import ClosestPointQuery
from .geometry import gaussian_curvature
from .mesh import TriangleMesh
from .ruled_surface import PiecewiseRuledSurface
from .surface_opt import ruling_samples, triangulate_strips

__all__ = [
    "EvalReport",
    "approximation_error",
    "result_samples",
    "seam_length_native",
    "seam_length_curvature",
    "export_colored",
    "evaluate",
]


@dataclass
class EvalReport:
    """Numbers reported for one fitted surface.

    eps_avg / eps_max are mean and maximum sample-to-reference distance.
    seam_length is the summed length of the result's seam polylines;
    seam_length_curvature is the curvature-based proxy measured on the
    reference mesh.  timings maps stage name to seconds.
    """

    eps_avg: float
    eps_max: float
    seam_length: float
    seam_length_curvature: float
    n_patches: int
    n_rulings: int
    n_dropped_curves: int
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.eps_avg > self.eps_max + 1e-15:
            raise ValueError("mean distance exceeds maximum distance")
        for name in ("eps_avg", "eps_max", "seam_length", "seam_length_curvature"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "eps_avg": float(self.eps_avg),
            "eps_max": float(self.eps_max),
            "seam_length": float(self.seam_length),
            "seam_length_curvature": float(self.seam_length_curvature),
            "n_patches": int(self.n_patches),
            "n_rulings": int(self.n_rulings),
            "n_dropped_curves": int(self.n_dropped_curves),
            "timings": {k: float(v) for k, v in self.timings.items()},
        }


def _as_query(reference) -> ClosestPointQuery:
    if isinstance(reference, ClosestPointQuery):
        return reference
    return ClosestPointQuery(reference)


def approximation_error(samples: np.ndarray, reference) -> tuple[float, float]:
    """Mean and maximum distance from result samples to the reference surface.

    reference is a TriangleMesh or a prebuilt ClosestPointQuery.
    """
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] != 3:
        raise ValueError("samples must be (n, 3)")
    if len(S) == 0:
        raise ValueError("no result samples to measure")
    _, sqd, _ = _as_query(reference).surface(S)
    d = np.sqrt(np.maximum(sqd, 0.0))
    return float(d.mean()), float(d.max())


def _triangle_lattice(k: int) -> np.ndarray:
    """(k*(k+1)//2, 3) barycentric coordinates of an interior lattice."""
    rows = []
    for i in range(k):
        for j in range(k - i):
            rows.append(((i + 0.5) / k, (j + 0.5) / k, (k - 1 - i - j) / k))
    return np.array(rows)


def result_samples(surface: PiecewiseRuledSurface, m: int = 8,
                   min_total: int = 1000, per_ruling: int = 10) -> np.ndarray:
    """Sample points covering the result surface.

    Points along every ruling (m interior samples each) plus a deterministic
    barycentric lattice on the triangulated strips, allocated by area.  The
    strip part alone has at least per_ruling * n_rulings points and the total
    is at least min_total.
    """
    P = surface.points
    ridx, w = ruling_samples(surface, m)
    segs = surface.rulings[ridx]
    on_rulings = w[:, 0, None] * P[segs[:, 0]] + w[:, 1, None] * P[segs[:, 1]]

    pts, faces = triangulate_strips(surface)
    if len(faces) == 0:
        return on_rulings
    n_bary = max(per_ruling * surface.n_rulings, min_total - len(on_rulings))
    tri = pts[faces]
    areas = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    total = areas.sum()
    if total <= 0.0:
        # collapsed strips, fall back to triangle corners
        return np.concatenate([on_rulings, tri.reshape(-1, 3)], axis=0)
    quota = np.ceil(n_bary * areas / total).astype(int)
    chunks = [on_rulings]
    for t in range(len(faces)):
        n_t = int(quota[t])
        if n_t == 0:
            continue
        k = 1
        while k * (k + 1) // 2 < n_t:
            k += 1
        bary = _triangle_lattice(k)[:n_t]
        chunks.append(bary @ tri[t])
    return np.concatenate(chunks, axis=0)


def _polyline_length(points: np.ndarray, ids: np.ndarray, closed: bool) -> float:
    Q = points[ids]
    d = np.linalg.norm(np.diff(Q, axis=0), axis=1).sum()
    if closed and len(ids) > 2:
        d += float(np.linalg.norm(Q[0] - Q[-1]))
    return float(d)


def seam_length_native(surface: PiecewiseRuledSurface) -> float:
    """Total length of the result's seam polylines."""
    total = 0.0
    for pl in surface.polylines:
        if pl.kind == "seam":
            total += _polyline_length(surface.points, pl.point_ids, pl.closed)
    return total


def seam_length_curvature(mesh: TriangleMesh, kappa_bar: float = 0.5) -> float:
    """Curvature-based seam proxy on a triangle mesh.

    Sums the length of interior edges whose endpoints both have Gaussian
    curvature magnitude above kappa_bar.  Boundary vertices, where the
    operator is undefined, never qualify.
    """
    if kappa_bar < 0.0:
        raise ValueError("curvature threshold must be nonnegative")
    K = gaussian_curvature(mesh)
    with np.errstate(invalid="ignore"):
        hot = np.abs(K) > kappa_bar  # NaN compares false
    e = mesh.edges[mesh.interior_edges]
    keep = hot[e[:, 0]] & hot[e[:, 1]]
    if not keep.any():
        return 0.0
    d = mesh.vertices[e[keep, 1]] - mesh.vertices[e[keep, 0]]
    return float(np.linalg.norm(d, axis=1).sum())


def export_colored(result, reference, path) -> dict:
    """Write the result mesh as ASCII PLY with distance-coded vertex colors.

    result is a TriangleMesh or a (vertices, faces) pair.  Each vertex gets
    the scalar distance-to-reference divided by the reference bounding-box
    diagonal, stored both as a float quality property and as an RGB ramp
    (blue = 0 to red = scale maximum).  Returns the scale legend.
    """
    if isinstance(result, TriangleMesh):
        V, F = result.vertices, result.faces
    else:
        V, F = result
        V = np.asarray(V, dtype=np.float64)
        F = np.asarray(F, dtype=np.int64)
    query = _as_query(reference)
    diag = float(np.linalg.norm(
        query.mesh.vertices.max(axis=0) - query.mesh.vertices.min(axis=0)))
    _, sqd, _ = query.surface(V)
    scalar = np.sqrt(np.maximum(sqd, 0.0)) / diag
    smax = float(scalar.max()) if len(scalar) else 0.0
    u = scalar / smax if smax > 0.0 else np.zeros_like(scalar)
    red = np.rint(255.0 * u).astype(int)
    blue = 255 - red
    green = np.zeros_like(red)

    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(V)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property float quality",
        f"element face {len(F)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for i in range(len(V)):
        x, y, z = V[i]
        lines.append("%.17g %.17g %.17g %d %d %d %.17g"
                     % (x, y, z, red[i], green[i], blue[i], scalar[i]))
    for f in F:
        lines.append("3 %d %d %d" % (f[0], f[1], f[2]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"diagonal": diag, "scale_max": smax, "n_vertices": int(len(V))}


def evaluate(surface: PiecewiseRuledSurface, reference: TriangleMesh,
             kappa_bar: float = 0.5, m: int = 8,
             timings: dict | None = None) -> EvalReport:
    """Assemble the full report for a fitted surface."""
    query = _as_query(reference)
    S = result_samples(surface, m=m)
    eps_avg, eps_max = approximation_error(S, query)
    dropped = sum(v for k, v in surface.stats.items()
                  if k.startswith("dropped_") and isinstance(v, (int, np.integer)))
    return EvalReport(
        eps_avg=eps_avg,
        eps_max=eps_max,
        seam_length=seam_length_native(surface),
        seam_length_curvature=seam_length_curvature(reference, kappa_bar),
        n_patches=len(surface.patch_ids),
        n_rulings=surface.n_rulings,
        n_dropped_curves=int(dropped),
        timings=dict(timings or {}),
    )
