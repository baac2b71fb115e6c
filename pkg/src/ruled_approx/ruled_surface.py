"""Initial piecewise ruled surface built from seams and the ruling field.

The surface is a pool of 3D points plus combinatorics on top: boundary
polylines (ordered point ids along seams and the mesh boundary),
rulings (point id pairs), and per-patch chains of rulings that remember
which polyline seeded them.  A point shared by several polylines (a
seam junction) appears once in the pool, so downstream optimization can
treat the pool as its variable set directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import FaceFrames, face_frames
from .mesh import TriangleMesh
from .ruling_field import RulingField, ruling_at_point, trace_curve
from .seams import chain_edge_polylines, patch_labels


@dataclass
class BoundaryPolyline:
    """Ordered point ids along one seam or surface-boundary curve."""

    kind: str                  # "seam" or "boundary"
    closed: bool
    point_ids: np.ndarray


@dataclass
class RulingChain:
    """Rulings seeded from one polyline into one patch, ordered by the
    arc-length position of their start points."""

    patch: int
    polyline: int
    closed: bool
    rulings: np.ndarray


@dataclass
class PiecewiseRuledSurface:
    points: np.ndarray                  # (np, 3) float64
    polylines: list
    rulings: np.ndarray                 # (nr, 2) point ids
    chains: list
    ruling_patch: np.ndarray            # (nr,) patch label per ruling
    warnings: list = dfield(default_factory=list)
    stats: dict = dfield(default_factory=dict)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_rulings(self) -> int:
        return len(self.rulings)

    @property
    def patch_ids(self):
        return sorted({c.patch for c in self.chains})

    def patch_chains(self, patch: int):
        return [c for c in self.chains if c.patch == patch]

    def ruling_segments(self) -> np.ndarray:
        """Ruling endpoint coordinates, shape (nr, 2, 3)."""
        return self.points[self.rulings]

    def copy(self) -> "PiecewiseRuledSurface":
        return PiecewiseRuledSurface(
            points=self.points.copy(),
            polylines=[BoundaryPolyline(p.kind, p.closed, p.point_ids.copy())
                       for p in self.polylines],
            rulings=self.rulings.copy(),
            chains=[RulingChain(c.patch, c.polyline, c.closed,
                                c.rulings.copy()) for c in self.chains],
            ruling_patch=self.ruling_patch.copy(),
            warnings=list(self.warnings),
            stats=dict(self.stats),
        )


class _PolyScaffold:
    """Mesh-side backbone of one polyline during construction."""

    def __init__(self, pid, kind, verts, mesh):
        self.pid = pid
        self.kind = kind
        self.closed = bool(verts[0] == verts[-1]) and len(verts) > 2
        vs = np.asarray(verts, dtype=np.int64)
        self.verts = vs
        P = mesh.vertices[vs]
        seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.cum[-1])
        self.seg_edges = np.array(
            [mesh.edge_index(int(vs[k]), int(vs[k + 1]))
             for k in range(len(vs) - 1)], dtype=np.int64)
        self.inserted = []        # (arc, point_id)

    def locate(self, arc: float):
        """Segment index and local parameter for an arc-length position."""
        j = int(np.searchsorted(self.cum, arc, side="right")) - 1
        j = min(max(j, 0), len(self.seg_edges) - 1)
        seg_len = self.cum[j + 1] - self.cum[j]
        t = 0.5 if seg_len <= 0 else (arc - self.cum[j]) / seg_len
        return j, float(min(max(t, 1e-6), 1.0 - 1e-6))


def _arc_dist(a: float, b: float, length: float, closed: bool) -> float:
    d = abs(a - b)
    if closed and length > 0:
        d = min(d, length - d)
    return d


def _adjacent_patches(mesh, labels, eid):
    out = set()
    for f in mesh.edge_faces[eid]:
        if f >= 0:
            out.add(int(labels[f]))
    return out


def build_initial_surface(mesh: TriangleMesh, fld: RulingField,
                          seam_edges, h: float = 0.01,
                          labels: np.ndarray | None = None,
                          frames: FaceFrames | None = None,
                          keep_curves: bool = False):
    """Seed integral curves from seams and boundary, one ruling each.

    Seeds are placed every h of arc length (at (k+0.5)h) along every
    seam polyline and every boundary polyline, and traced into each
    adjacent patch with seams and the boundary as stops.  Each accepted
    curve contributes the straight segment between its endpoints as a
    ruling; the endpoints become vertices of the polylines they lie on.
    A seed is skipped when either endpoint of its curve would land
    within h/2 of a position already claimed on that polyline for the
    same patch (open-polyline endpoints count as claimed, which
    suppresses rulings grazing a corner).  Curves stopped by the length
    cap or a field singularity, and curves shorter than h/2, are
    dropped and counted in stats.
    """
    if h <= 0:
        raise ValueError("spacing h must be positive")
    seam_edges = np.asarray(sorted(int(e) for e in np.asarray(seam_edges).ravel()),
                            dtype=np.int64)
    if frames is None:
        frames = face_frames(mesh.vertices, mesh.faces)
    if labels is None:
        labels, _ = patch_labels(mesh, seam_edges)

    # scaffolds: seam chains first, then boundary chains grouped by patch
    scaffolds: list[_PolyScaffold] = []
    for verts in chain_edge_polylines(mesh, seam_edges):
        scaffolds.append(_PolyScaffold(len(scaffolds), "seam", verts, mesh))
    bnd = np.nonzero(mesh.boundary_edge)[0]
    bnd_label = (labels[np.max(mesh.edge_faces[bnd], axis=1)]
                 if len(bnd) else np.array([], dtype=np.int64))
    for lab in sorted(set(int(x) for x in bnd_label)):
        eids = bnd[bnd_label == lab]
        for verts in chain_edge_polylines(mesh, eids):
            scaffolds.append(_PolyScaffold(len(scaffolds), "boundary", verts, mesh))
    if not scaffolds:
        raise ValueError("mesh has no seams and no boundary to seed rulings from")

    edge_map = {}
    for sc in scaffolds:
        for j, e in enumerate(sc.seg_edges):
            edge_map[int(e)] = (sc.pid, j)

    points: list[np.ndarray] = []
    vert_point: dict[int, int] = {}     # mesh vertex -> shared point id

    def add_point(p) -> int:
        points.append(np.asarray(p, dtype=np.float64))
        return len(points) - 1

    def junction_point(v: int) -> int:
        if v not in vert_point:
            vert_point[v] = add_point(mesh.vertices[v])
        return vert_point[v]

    # claimed arc positions per (polyline, patch); open-polyline ends are
    # claimed up front for every patch the polyline touches
    claimed: dict[tuple, list] = {}
    for sc in scaffolds:
        if sc.closed:
            continue
        pats = set()
        for e in sc.seg_edges:
            pats |= _adjacent_patches(mesh, labels, int(e))
        for lab in sorted(pats):
            claimed.setdefault((sc.pid, lab), []).extend([0.0, sc.length])
        junction_point(int(sc.verts[0]))
        junction_point(int(sc.verts[-1]))

    def is_claimed(pid, lab, arc, length, closed):
        for a in claimed.get((pid, lab), ()):
            if _arc_dist(a, arc, length, closed) < 0.5 * h:
                return True
        return False

    seam_set = frozenset(int(e) for e in seam_edges)
    stats = {"dropped_singular": 0, "dropped_max_len": 0,
             "dropped_short": 0, "dropped_grazing": 0,
             "skipped_duplicate": 0}
    rulings = []
    ruling_patch = []
    chain_bag: dict[tuple, list] = {}   # (patch, pid) -> [(start_arc, rid)]
    curves = [] if keep_curves else None
    centroids = mesh.face_centroids()

    for sc in scaffolds:
        if sc.length <= 0:
            continue
        n = int(np.ceil(sc.length / h - 0.5))
        arcs = (np.arange(n) + 0.5) * h if n > 0 else np.array([0.5 * sc.length])
        for s in arcs:
            j, t = sc.locate(float(s))
            eid = int(sc.seg_edges[j])
            va, vb = sc.verts[j], sc.verts[j + 1]
            p = (1 - t) * mesh.vertices[va] + t * mesh.vertices[vb]
            sides = [int(f) for f in mesh.edge_faces[eid] if f >= 0]
            sides.sort(key=lambda f: (labels[f], f))
            ehat = mesh.vertices[vb] - mesh.vertices[va]
            ehat = ehat / max(float(np.linalg.norm(ehat)), 1e-300)
            ia_shared = -1      # one start point even when both sides trace
            for f in sides:
                lab = int(labels[f])
                if is_claimed(sc.pid, lab, float(s), sc.length, sc.closed):
                    stats["skipped_duplicate"] += 1
                    continue
                # a ruling tangent to its own polyline never enters the
                # patch; skip the seed instead of tracing along the edge
                rbar = ruling_at_point(frames, fld, f, p)
                nr = float(np.linalg.norm(rbar))
                if nr < 1e-12:
                    stats["dropped_singular"] += 1
                    continue
                if 1.0 - float(rbar @ ehat / nr) ** 2 < 1e-4:
                    stats["dropped_grazing"] += 1
                    continue
                try:
                    cur = trace_curve(mesh, fld, p, f, stop_edges=seam_set,
                                      frames=frames,
                                      init_dir=centroids[f] - p,
                                      bidirectional=False)
                except ValueError:
                    stats["dropped_singular"] += 1
                    continue
                if cur.stop_reason == "singular":
                    stats["dropped_singular"] += 1
                    continue
                if cur.stop_reason == "max_len":
                    stats["dropped_max_len"] += 1
                    continue
                if cur.length < 0.5 * h:
                    stats["dropped_short"] += 1
                    continue
                pid2, j2 = edge_map[int(cur.stop_edge)]
                sc2 = scaffolds[pid2]
                q = cur.points[-1]
                A = mesh.vertices[sc2.verts[j2]]
                B = mesh.vertices[sc2.verts[j2 + 1]]
                ab = B - A
                denom = float(ab @ ab)
                t2 = 0.5 if denom <= 0 else float(np.clip((q - A) @ ab / denom, 0, 1))
                arc2 = float(sc2.cum[j2] + t2 * (sc2.cum[j2 + 1] - sc2.cum[j2]))
                if is_claimed(pid2, lab, arc2, sc2.length, sc2.closed):
                    stats["skipped_duplicate"] += 1
                    continue
                if ia_shared < 0:
                    ia_shared = add_point(p)
                    sc.inserted.append((float(s), ia_shared))
                ia = ia_shared
                ib = add_point(q)
                sc2.inserted.append((arc2, ib))
                claimed.setdefault((sc.pid, lab), []).append(float(s))
                claimed.setdefault((pid2, lab), []).append(arc2)
                rid = len(rulings)
                rulings.append((ia, ib))
                ruling_patch.append(lab)
                chain_bag.setdefault((lab, sc.pid), []).append((float(s), rid))
                if keep_curves:
                    curves.append(cur)

    warnings = []
    with_rulings = {lab for lab, _ in chain_bag}
    for lab in sorted(set(int(x) for x in np.unique(labels))):
        if lab not in with_rulings:
            warnings.append(f"patch {lab} produced no rulings; omitted")

    chains = []
    for (lab, pid) in sorted(chain_bag):
        entries = sorted(chain_bag[(lab, pid)])
        # a chain is cyclic only when its rulings cover the whole closed
        # seed polyline: the wrap gap must look like a regular seed gap
        cyc = False
        if scaffolds[pid].closed and len(entries) > 2:
            gap = (entries[0][0] - entries[-1][0]) % scaffolds[pid].length
            cyc = gap <= 2.0 * h
        chains.append(RulingChain(
            patch=lab, polyline=pid, closed=cyc,
            rulings=np.array([rid for _, rid in entries], dtype=np.int64)))

    polylines = []
    for sc in scaffolds:
        ins = sorted(sc.inserted)
        ids = [i for _, i in ins]
        if not sc.closed:
            ids = ([vert_point[int(sc.verts[0])]] + ids
                   + [vert_point[int(sc.verts[-1])]])
        if not ids:
            warnings.append(f"polyline {sc.pid} ({sc.kind}) received no rulings")
        polylines.append(BoundaryPolyline(
            kind=sc.kind, closed=sc.closed,
            point_ids=np.asarray(ids, dtype=np.int64)))

    surf = PiecewiseRuledSurface(
        points=np.array(points, dtype=np.float64).reshape(-1, 3),
        polylines=polylines,
        rulings=np.array(rulings, dtype=np.int64).reshape(-1, 2),
        chains=chains,
        ruling_patch=np.asarray(ruling_patch, dtype=np.int64),
        warnings=warnings,
        stats=stats,
    )
    if keep_curves:
        return surf, curves
    return surf


def _point_locations(surface):
    """point id -> (polyline index, index within that polyline)."""
    loc = {}
    for pi, pl in enumerate(surface.polylines):
        for k, pt in enumerate(pl.point_ids):
            loc.setdefault(int(pt), (pi, k))
    return loc


def _index_path(n, i0, i1, closed):
    """Index sequence from i0 to i1 along a polyline, shorter way round
    on closed ones."""
    if i0 == i1:
        return [i0]
    if not closed:
        step = 1 if i1 > i0 else -1
        return list(range(i0, i1 + step, step))
    fwd = (i1 - i0) % n
    bwd = (i0 - i1) % n
    if fwd <= bwd:
        return [(i0 + k) % n for k in range(fwd + 1)]
    return [(i0 - k) % n for k in range(bwd + 1)]


class _SideSampler:
    """Interpolates points between two ruling endpoints along the
    boundary path joining them."""

    def __init__(self, surface, loc, splines):
        self.surface = surface
        self.loc = loc
        self.splines = splines

    def _path(self, a, b):
        """(polyline, index) steps from endpoint a to endpoint b.

        When the endpoints live on different open polylines the path
        runs through a junction they share; the junction appears twice
        (once per polyline) as a zero-length hop.
        """
        pa, ia = self.loc[a]
        pb, ib = self.loc[b]
        pls = self.surface.polylines
        if pa == pb:
            idx = _index_path(len(pls[pa].point_ids), ia, ib, pls[pa].closed)
            return [(pa, i) for i in idx]
        if pls[pa].closed or pls[pb].closed:
            return None
        A, B = pls[pa].point_ids, pls[pb].point_ids
        if len(A) == 0 or len(B) == 0:
            return None
        for ea in (0, len(A) - 1):
            for eb in (0, len(B) - 1):
                if int(A[ea]) != int(B[eb]):
                    continue
                sa = 1 if ea >= ia else -1
                part_a = list(range(ia, ea + sa, sa))
                sb = 1 if ib >= eb else -1
                part_b = list(range(eb, ib + sb, sb))
                return ([(pa, i) for i in part_a]
                        + [(pb, i) for i in part_b])
        return None

    def sample(self, a, b, fracs, mode):
        """Points at arc-length fractions of the a->b boundary path.

        Returns a list of (point, (polyline, after_index, t)) or None
        when no path exists; the placement triple orders insertions
        along the polyline.
        """
        path = self._path(a, b)
        if path is None or len(path) < 2:
            return None
        ids = np.asarray([self.surface.polylines[pi].point_ids[i]
                          for pi, i in path])
        pts = self.surface.points[ids]
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        total = float(cum[-1])
        if total <= 0:
            return None
        out = []
        for fr in fracs:
            target = fr * total
            j = int(np.searchsorted(cum, target, side="right")) - 1
            j = min(max(j, 0), len(seg) - 1)
            t = 0.0 if seg[j] <= 0 else float((target - cum[j]) / seg[j])
            (pj0, i0), (pj1, i1) = path[j], path[j + 1]
            if pj0 == pj1:
                if mode == "spline":
                    p = self._spline_eval(pj0, i0, i1, t, pts[j], pts[j + 1])
                else:
                    p = (1 - t) * pts[j] + t * pts[j + 1]
                n_i = len(self.surface.polylines[pj0].point_ids)
                wrap = (self.surface.polylines[pj0].closed
                        and abs(i0 - i1) == n_i - 1)
                after = (n_i - 1) if wrap else min(i0, i1)
                # fraction measured in polyline order from the anchor
                forward = (i0 == n_i - 1) if wrap else (i1 > i0)
                place = (pj0, after, t if forward else 1.0 - t)
            else:
                # zero-length junction hop: park at the junction
                p = pts[j + 1].copy()
                place = (pj1, 0, 0.0) if i1 == 0 else (pj1, i1 - 1, 1.0)
            out.append((np.asarray(p, dtype=np.float64), place))
        return out

    def _spline_eval(self, pl, i0, i1, t, p0, p1):
        sp_u = self.splines.get(pl)
        if sp_u is None:
            return (1 - t) * p0 + t * p1
        sp, u = sp_u
        n_i = len(self.surface.polylines[pl].point_ids)
        closed = self.surface.polylines[pl].closed
        if closed and abs(i0 - i1) == n_i - 1:
            # wrap segment between the last and first points
            if i0 == n_i - 1:
                ua, ub = u[n_i - 1], u[n_i]
            else:
                ua, ub = u[n_i], u[n_i - 1]
        else:
            ua, ub = u[i0], u[i1]
        return np.asarray(sp((1 - t) * ua + t * ub), dtype=np.float64)


def _polyline_splines(surface):
    splines = {}
    for pi, pl in enumerate(surface.polylines):
        ids = pl.point_ids
        if len(ids) < (3 if pl.closed else 2):
            continue
        P = surface.points[ids]
        if pl.closed:
            P = np.vstack([P, P[:1]])
        seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
        if np.any(seg <= 0):
            continue
        u = np.concatenate([[0.0], np.cumsum(seg)])
        try:
            splines[pi] = (CubicSpline(u, P, bc_type="periodic" if pl.closed
                                       else "natural"), u)
        except ValueError:
            continue
    return splines


def densify_rulings(surface: PiecewiseRuledSurface, factor: int,
                    mode: str = "arclength") -> PiecewiseRuledSurface:
    """Insert factor-1 rulings between each adjacent pair in every chain.

    New endpoints sit at matched arc-length fractions of the boundary
    paths between the old endpoints (default), or at equal-parameter
    points of per-polyline cubic splines (mode="spline").  Pairs whose
    endpoints cannot be joined along the boundary are left alone and
    counted in stats["densify_skipped"].
    """
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    if mode not in ("arclength", "spline"):
        raise ValueError("mode must be 'arclength' or 'spline'")
    out = surface.copy()
    if factor == 1:
        out.stats = dict(out.stats, densify_skipped=0)
        return out
    loc = _point_locations(surface)
    splines = _polyline_splines(surface) if mode == "spline" else {}
    sampler = _SideSampler(surface, loc, splines)
    fracs = [k / factor for k in range(1, factor)]

    new_points = []
    pend_ins: dict[int, list] = {}      # polyline -> [(after, t, seq, pid)]
    new_rulings = []
    new_patch = []
    chain_new: dict[int, list] = {}     # chain idx -> [(slot, seq, rid)]
    skipped = 0
    n0 = len(surface.points)

    def emit(p, place):
        pid = n0 + len(new_points)
        new_points.append(p)
        pi, after, t = place
        pend_ins.setdefault(pi, []).append((after, t, len(new_points), pid))
        return pid

    for ci, ch in enumerate(surface.chains):
        rl = ch.rulings
        if len(rl) < 2:
            continue
        pairs = [(k, k + 1) for k in range(len(rl) - 1)]
        if ch.closed and len(rl) > 2:
            pairs.append((len(rl) - 1, 0))
        for (ka, kb) in pairs:
            ra = surface.rulings[rl[ka]]
            rb = surface.rulings[rl[kb]]
            side0 = sampler.sample(int(ra[0]), int(rb[0]), fracs, mode)
            side1 = sampler.sample(int(ra[1]), int(rb[1]), fracs, mode)
            if side0 is None or side1 is None:
                skipped += 1
                continue
            for k in range(factor - 1):
                p0, place0 = side0[k]
                p1, place1 = side1[k]
                ia = emit(p0, place0)
                ib = emit(p1, place1)
                rid = len(surface.rulings) + len(new_rulings)
                new_rulings.append((ia, ib))
                new_patch.append(int(ch.patch))
                chain_new.setdefault(ci, []).append((ka, k, rid))

    out.stats = dict(out.stats, densify_skipped=skipped)
    if not new_rulings:
        return out

    out.points = np.vstack([out.points, np.asarray(new_points)])
    out.rulings = np.vstack([out.rulings,
                             np.asarray(new_rulings, dtype=np.int64)])
    out.ruling_patch = np.concatenate(
        [out.ruling_patch, np.asarray(new_patch, dtype=np.int64)])

    for pi, ins in pend_ins.items():
        ids = list(out.polylines[pi].point_ids)
        # descending anchors so earlier inserts don't shift later ones;
        # within one segment, descending t keeps geometric order
        for after, t, seq, pid in sorted(ins, key=lambda x: (-x[0], -x[1], -x[2])):
            ids.insert(after + 1, pid)
        out.polylines[pi].point_ids = np.asarray(ids, dtype=np.int64)

    for ci, items in chain_new.items():
        seq = list(out.chains[ci].rulings)
        for slot, order, rid in sorted(items, key=lambda x: (-x[0], -x[1])):
            seq.insert(slot + 1, rid)
        out.chains[ci].rulings = np.asarray(seq, dtype=np.int64)

    out.stats = dict(out.stats, densify_skipped=skipped)
    return out
