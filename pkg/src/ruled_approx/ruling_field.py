"""First-order ruling direction field on mesh faces.

Each face f carries (a_f, b_f, gamma_f). The direction at the centroid is
r_f = (a_f d1 + b_f d2) / ||.||, and the (unnormalized) direction at a point
s on the face is

    rbar_f(s) = (1 + gamma_f x_s) r_f + gamma_f y_s c_f,

with (x_s, y_s) the coordinates of s - o_f in the (r_f, c_f) frame and
c_f = n_f x r_f. Iso-u lines of the underlying local model are straight, so
integral curves are polylines that are straight within each face. The hard
feasibility constraint 1 + gamma_f x > 0 at the three vertices keeps the
direction well-defined on the whole face.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .mesh import TriangleMesh
from .geometry import FaceFrames, face_frames


@dataclass
class RulingField:
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray

    def copy(self) -> "RulingField":
        return RulingField(self.a.copy(), self.b.copy(), self.gamma.copy())


def face_ruling_dirs(frames: FaceFrames, fld: RulingField):
    """Unit r_f and c_f = n_f x r_f for every face."""
    raw = fld.a[:, None] * frames.d1 + fld.b[:, None] * frames.d2
    nr = np.linalg.norm(raw, axis=1)
    if np.any(nr < 1e-9):
        bad = int(np.argmin(nr))
        raise ValueError(f"degenerate ruling coefficients on face {bad}")
    r = raw / nr[:, None]
    c = np.cross(frames.n, r)
    return r, c


def face_ruling_dir(mesh: TriangleMesh, fld: RulingField, f: int):
    frames = face_frames(mesh.vertices, mesh.faces)
    r, c = face_ruling_dirs(frames, fld)
    return r[f], c[f]


def ruling_at_point(frames: FaceFrames, fld: RulingField, f: int, s: np.ndarray) -> np.ndarray:
    """Unnormalized ruling direction rbar_f(s) for a point s on face f."""
    r, c = _face_dirs_one(frames, fld, f)
    rel = s - frames.o[f]
    x = rel @ r
    y = rel @ c
    return (1.0 + fld.gamma[f] * x) * r + fld.gamma[f] * y * c


def _face_dirs_one(frames: FaceFrames, fld: RulingField, f: int):
    raw = fld.a[f] * frames.d1[f] + fld.b[f] * frames.d2[f]
    nr = np.linalg.norm(raw)
    if nr < 1e-9:
        raise ValueError(f"degenerate ruling coefficients on face {f}")
    r = raw / nr
    return r, np.cross(frames.n[f], r)


def feasibility_margins(mesh: TriangleMesh, fld: RulingField,
                        frames: FaceFrames | None = None) -> np.ndarray:
    """min_i (1 + gamma_f x_{v_i}) per face; positive means feasible."""
    if frames is None:
        frames = face_frames(mesh.vertices, mesh.faces)
    raw = fld.a[:, None] * frames.d1 + fld.b[:, None] * frames.d2
    nr = np.linalg.norm(raw, axis=1)
    r = raw / np.maximum(nr, 1e-300)[:, None]
    vals = np.empty((mesh.n_faces, 3))
    for i in range(3):
        rel = mesh.vertices[mesh.faces[:, i]] - frames.o
        x = np.einsum("ij,ij->i", rel, r)
        vals[:, i] = 1.0 + fld.gamma * x
    return vals.min(axis=1)


def check_feasibility(mesh: TriangleMesh, fld: RulingField, f: int | None = None):
    """(feasible, margin). With f=None the margin is the minimum over faces."""
    margins = feasibility_margins(mesh, fld)
    if f is not None:
        return bool(margins[f] > 0.0), float(margins[f])
    return bool(np.all(margins > 0.0)), float(margins.min())


def rescale_gauge(frames: FaceFrames, a: np.ndarray, b: np.ndarray):
    """Rescale (a, b) so that ||a d1 + b d2|| = 1 on every face. The energy
    only depends on the direction, so this removes the scale gauge."""
    raw = a[:, None] * frames.d1 + b[:, None] * frames.d2
    nr = np.linalg.norm(raw, axis=1)
    nr = np.maximum(nr, 1e-300)
    return a / nr, b / nr


@dataclass
class IntegralCurve:
    """Polyline traced along the ruling field.

    points[i] .. points[i+1] lies on faces[i]. stop_reason describes the
    forward end, start_reason the backward end ('seed' when not traced
    backward).
    """

    points: np.ndarray
    faces: list
    stop_reason: str
    start_reason: str
    stop_edge: int = -1
    start_edge: int = -1
    hit_max_len: bool = False

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


class _FacePlanes:
    """Cached per-face 2D coordinate systems used by the tracer."""

    def __init__(self, mesh: TriangleMesh, frames: FaceFrames):
        self.mesh = mesh
        self.frames = frames
        t1 = frames.d1 / np.linalg.norm(frames.d1, axis=1)[:, None]
        self.t1 = t1
        self.t2 = np.cross(frames.n, t1)

    def to2d(self, f: int, p: np.ndarray) -> np.ndarray:
        rel = p - self.frames.o[f]
        return np.array([rel @ self.t1[f], rel @ self.t2[f]])


def _exit_edge(planes: _FacePlanes, f: int, p: np.ndarray, w: np.ndarray,
               skip_edge: int):
    """First crossing of ray p + t w (t > 0) with the face's edges.

    Returns (t, edge_index_in_face 0..2, s_param) or None when the ray
    leaves through no edge (numerical dead end).
    """
    mesh = planes.mesh
    V = mesh.vertices
    fverts = mesh.faces[f]
    p2 = planes.to2d(f, p)
    w2 = np.array([w @ planes.t1[f], w @ planes.t2[f]])
    best = None
    for k in range(3):
        eidx = mesh.face_edges[f][k]
        if eidx == skip_edge:
            continue
        a2 = planes.to2d(f, V[fverts[k]])
        b2 = planes.to2d(f, V[fverts[(k + 1) % 3]])
        d2 = b2 - a2
        det = w2[0] * (-d2[1]) - w2[1] * (-d2[0])
        if abs(det) < 1e-15:
            continue
        rhs = a2 - p2
        t = (rhs[0] * (-d2[1]) - rhs[1] * (-d2[0])) / det
        s = (w2[0] * rhs[1] - w2[1] * rhs[0]) / det
        if t > 1e-12 and -1e-9 <= s <= 1.0 + 1e-9:
            if best is None or t < best[0]:
                best = (t, k, min(max(s, 0.0), 1.0))
    return best


def _trace_one_direction(mesh, planes, fld, p0, f0, w0, stop_edges, max_len):
    frames = planes.frames
    pts = [np.asarray(p0, dtype=np.float64)]
    faces: list[int] = []
    p, f = np.asarray(p0, dtype=np.float64), int(f0)
    w = np.asarray(w0, dtype=np.float64)
    total = 0.0
    entry_edge = -1
    hit_cap = False
    for _ in range(8 * mesh.n_faces + 64):
        hit = _exit_edge(planes, f, p, w, entry_edge)
        if hit is None:
            return pts, faces, "singular", -1, hit_cap
        t, k, s = hit
        eidx = int(mesh.face_edges[f][k])
        if total + t > max_len:
            pts.append(p + (max_len - total) * w)
            faces.append(f)
            return pts, faces, "max_len", -1, True
        q = p + t * w
        total += t
        va, vb = mesh.faces[f][k], mesh.faces[f][(k + 1) % 3]
        elen = np.linalg.norm(mesh.vertices[vb] - mesh.vertices[va])
        # vertex hit: nudge the crossing point into the edge interior
        if s * elen < 1e-9 or (1.0 - s) * elen < 1e-9:
            edir = (mesh.vertices[vb] - mesh.vertices[va]) / elen
            q = q + (1e-7 * elen) * (edir if s * elen < 1e-9 else -edir)
        pts.append(q)
        faces.append(f)
        if eidx in stop_edges:
            return pts, faces, "stop_edge", eidx, hit_cap
        if mesh.boundary_edge[eidx]:
            return pts, faces, "boundary", eidx, hit_cap
        fa, fb = mesh.edge_faces[eidx]
        f_next = int(fb if fa == f else fa)
        rbar = ruling_at_point(frames, fld, f_next, q)
        nr = np.linalg.norm(rbar)
        if nr < 1e-12:
            return pts, faces, "singular", -1, hit_cap
        w_next = rbar / nr
        if w_next @ w < 0.0:
            w_next = -w_next
        p, f, w = q, f_next, w_next
        entry_edge = eidx
    return pts, faces, "max_len", -1, True


def trace_curve(mesh: TriangleMesh, fld: RulingField, seed_point, seed_face: int,
                stop_edges=frozenset(), max_len: float | None = None,
                frames: FaceFrames | None = None, init_dir=None,
                bidirectional: bool = True) -> IntegralCurve:
    """Trace an integral curve of the ruling field through a seed point.

    With bidirectional=True (the default) the curve extends in both the
    +rbar and -rbar directions from the seed. init_dir overrides the
    forward direction (it is projected onto rbar's sign).
    """
    if frames is None:
        frames = face_frames(mesh.vertices, mesh.faces)
    if max_len is None:
        max_len = 2.0 * mesh.bbox_diagonal()
    planes = _FacePlanes(mesh, frames)
    p0 = np.asarray(seed_point, dtype=np.float64)
    rbar = ruling_at_point(frames, fld, int(seed_face), p0)
    nr = np.linalg.norm(rbar)
    if nr < 1e-12:
        raise ValueError("ruling field is singular at the seed point")
    w = rbar / nr
    if init_dir is not None:
        d = np.asarray(init_dir, dtype=np.float64)
        if w @ d < 0.0:
            w = -w
    stop_edges = set(int(e) for e in stop_edges)
    fpts, ffaces, freason, fedge, fcap = _trace_one_direction(
        mesh, planes, fld, p0, seed_face, w, stop_edges, max_len)
    if not bidirectional:
        return IntegralCurve(points=np.asarray(fpts), faces=ffaces,
                             stop_reason=freason, start_reason="seed",
                             stop_edge=fedge, hit_max_len=fcap)
    bpts, bfaces, breason, bedge, bcap = _trace_one_direction(
        mesh, planes, fld, p0, seed_face, -w, stop_edges, max_len)
    if bfaces and ffaces:
        # both halves start with a collinear segment on the seed face;
        # drop the interior seed point and fuse them
        pts = list(reversed(bpts))[:-1] + fpts[1:]
        faces = list(reversed(bfaces)) + ffaces[1:]
    else:
        pts = list(reversed(bpts[1:])) + fpts
        faces = list(reversed(bfaces)) + ffaces
    return IntegralCurve(points=np.asarray(pts), faces=faces,
                         stop_reason=freason, start_reason=breason,
                         stop_edge=fedge, start_edge=bedge,
                         hit_max_len=fcap or bcap)


def export_curves_obj(curves, path) -> None:
    """Debug export of integral curves as OBJ polylines (l records)."""
    with open(path, "w") as fh:
        base = 1
        for c in curves:
            for p in c.points:
                fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
            idx = " ".join(str(base + i) for i in range(len(c.points)))
            fh.write(f"l {idx}\n")
            base += len(c.points)
