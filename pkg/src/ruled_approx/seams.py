"""Seam extraction and cleanup on top of the joint optimization output.

Interior edges whose combined geodesic/curvature error stays above a
threshold are seam candidates.  Isolated candidates pass through as final
seams; clustered candidates are dissolved and replaced by short constructed
segments: single faces through a small case analysis on their split
vertices, larger regions through a multi-label graph cut over subdivided
faces.  The ruling field is re-optimized inside the dissolved regions
afterwards so integral curves stay geodesic up to the new seams.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import jax
import jax.numpy as jnp

from .energies import EDGE_SAMPLES
from .geometry import face_frames
from .graphcut import LabelingProblem, alpha_expansion
from .lbfgs import minimize as lbfgs_minimize
from .mesh import TriangleMesh
from .ruling_field import RulingField, face_ruling_dirs, feasibility_margins
from .field_init import _to_edge_coeffs

EPS_AREA_FRAC = 1e-3
LAMBDA_LABEL = 0.5
UNREACHABLE = 1e9


class SeamExtractionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# candidate edges and the cleanup face set


def extract_candidates(mesh: TriangleMesh, e_comb: np.ndarray,
                       eps_edge: float) -> np.ndarray:
    """Interior edges whose combined error exceeds the threshold."""
    iedges = mesh.interior_edges
    e_comb = np.asarray(e_comb, dtype=np.float64)
    if e_comb.shape != (len(iedges),):
        raise ValueError("error map length does not match interior edge count")
    return np.sort(iedges[e_comb > eps_edge])


def build_cleanup_set(mesh: TriangleMesh, candidates: np.ndarray,
                      eps_area_frac: float = EPS_AREA_FRAC):
    """Faces to dissolve and their connected regions.

    A face joins the set when at least two of its edges are candidates, or
    when it belongs to a small island fully enclosed by candidate edges
    (total area below ``eps_area_frac`` of the mesh area).
    Returns (fb_faces, regions, n_island_faces).
    """
    cand = np.zeros(mesh.n_edges, dtype=bool)
    cand[candidates] = True
    fb = cand[mesh.face_edges].sum(axis=1) >= 2

    n_island = 0
    if len(candidates) > 0:
        areas = mesh.face_areas()
        int_e = mesh.interior_edges
        open_e = int_e[~cand[int_e]]
        ef = mesh.edge_faces[open_e]
        nf = mesh.n_faces
        g = sp.coo_matrix((np.ones(len(ef)), (ef[:, 0], ef[:, 1])),
                          shape=(nf, nf))
        ncomp, comp = csgraph.connected_components(g, directed=False)
        if ncomp > 1:
            comp_area = np.bincount(comp, weights=areas, minlength=ncomp)
            touches = np.zeros(ncomp, dtype=bool)
            for e in np.flatnonzero(mesh.boundary_edge):
                touches[comp[mesh.edge_faces[e, 0]]] = True
            # islands must actually be fenced off by candidates, not just be
            # separate mesh components
            fenced = np.zeros(ncomp, dtype=bool)
            for e in int_e[cand[int_e]]:
                f0, f1 = mesh.edge_faces[e]
                if comp[f0] != comp[f1]:
                    fenced[comp[f0]] = True
                    fenced[comp[f1]] = True
            cap = eps_area_frac * areas.sum()
            for c in range(ncomp):
                if touches[c] or not fenced[c] or comp_area[c] >= cap:
                    continue
                faces = comp == c
                n_island += int(np.sum(faces & ~fb))
                fb |= faces

    fb_faces = np.flatnonzero(fb)
    regions = []
    if len(fb_faces) > 0:
        int_e = mesh.interior_edges
        ef = mesh.edge_faces[int_e]
        both = fb[ef[:, 0]] & fb[ef[:, 1]]
        ef = ef[both]
        nf = mesh.n_faces
        g = sp.coo_matrix((np.ones(len(ef)), (ef[:, 0], ef[:, 1])),
                          shape=(nf, nf))
        _, comp = csgraph.connected_components(g, directed=False)
        seen = {}
        for f in fb_faces:
            seen.setdefault(comp[f], []).append(f)
        regions = [np.asarray(v, dtype=np.int64)
                   for _, v in sorted(seen.items(), key=lambda kv: kv[1][0])]
    return fb_faces, regions, n_island


def _region_frontier(mesh: TriangleMesh, in_region: np.ndarray,
                     faces: np.ndarray) -> np.ndarray:
    out = set()
    for f in faces:
        for e in mesh.face_edges[f]:
            f0, f1 = mesh.edge_faces[e]
            other = f1 if f0 == f else f0
            if other < 0 or not in_region[other]:
                out.add(int(e))
    return np.asarray(sorted(out), dtype=np.int64)


def split_vertices_of_region(mesh: TriangleMesh, in_region: np.ndarray,
                             frontier: np.ndarray,
                             candidates: np.ndarray) -> list[int]:
    """Region-boundary vertices touched by a candidate edge that is not an
    edge of any region face."""
    on_boundary = set()
    for e in frontier:
        on_boundary.update(int(v) for v in mesh.edges[e])
    splits = set()
    for e in candidates:
        f0, f1 = mesh.edge_faces[e]
        if in_region[f0] or (f1 >= 0 and in_region[f1]):
            continue
        for v in mesh.edges[e]:
            if int(v) in on_boundary:
                splits.add(int(v))
    return sorted(splits)


# ---------------------------------------------------------------------------
# region boundary loops and segment labels


def _boundary_chains(mesh: TriangleMesh, frontier: np.ndarray):
    """Decompose the frontier edge set into closed loops (vertex walks).

    Returns (chains, open_found): each chain is (vertex_seq, edge_seq) with
    vertex_seq one longer than edge_seq; closed chains repeat the first
    vertex at the end.  At junction vertices the smallest unused edge id is
    taken, which keeps the decomposition deterministic.
    """
    inc: dict[int, list[int]] = {}
    for e in frontier:
        a, b = (int(v) for v in mesh.edges[e])
        inc.setdefault(a, []).append(int(e))
        inc.setdefault(b, []).append(int(e))
    for v in inc:
        inc[v].sort()
    used = set()
    chains = []
    open_found = False
    for e0 in frontier:
        e0 = int(e0)
        if e0 in used:
            continue
        a, b = (int(v) for v in mesh.edges[e0])
        verts = [a, b]
        eids = [e0]
        used.add(e0)
        while verts[-1] != verts[0]:
            w = verts[-1]
            nxt = next((e for e in inc[w] if e not in used), None)
            if nxt is None:
                open_found = True
                break
            used.add(nxt)
            p, q = (int(v) for v in mesh.edges[nxt])
            verts.append(q if p == w else p)
            eids.append(nxt)
        chains.append((verts, eids))
    return chains, open_found


def _segment_labels(mesh: TriangleMesh, chains, splits: set):
    """Label frontier edges by the boundary segment between split vertices."""
    edge_label: dict[int, int] = {}
    nxt = 0
    for verts, eids in chains:
        k = len(eids)
        closed = verts[-1] == verts[0]
        pos = [i for i in range(k) if verts[i] in splits]
        if not closed:
            # fallback for non-manifold frontiers: interior splits still
            # break the chain into segments
            for i, e in enumerate(eids):
                edge_label[e] = nxt
                if i + 1 < k and verts[i + 1] in splits:
                    nxt += 1
            nxt += 1
            continue
        if not pos:
            for e in eids:
                edge_label[e] = nxt
            nxt += 1
            continue
        for j, i0 in enumerate(pos):
            i1 = pos[(j + 1) % len(pos)]
            lab = nxt
            nxt += 1
            i = i0
            while True:
                edge_label[eids[i]] = lab
                i = (i + 1) % k
                if i == i1:
                    break
                if i == i0:
                    break
    return edge_label, nxt


def _region_vertex_graph(mesh: TriangleMesh, faces: np.ndarray):
    pairs = set()
    for f in faces:
        for e in mesh.face_edges[f]:
            a, b = (int(v) for v in mesh.edges[e])
            pairs.add((a, b))
    if not pairs:
        return None
    rows, cols, vals = [], [], []
    for a, b in sorted(pairs):
        w = float(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]))
        rows.append(a)
        cols.append(b)
        vals.append(w)
    n = mesh.n_vertices
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _farthest_boundary_vertex(graph, source: int, boundary: np.ndarray,
                              exclude=()) -> int:
    dist = csgraph.dijkstra(graph, directed=False, indices=source)
    best, best_d = -1, -np.inf
    for v in boundary:
        v = int(v)
        if v in exclude or not np.isfinite(dist[v]):
            continue
        if dist[v] > best_d + 1e-15:
            best, best_d = v, dist[v]
    return best


def virtual_splits(mesh: TriangleMesh, faces: np.ndarray,
                   boundary_verts: np.ndarray, existing: list[int]):
    """Bring the split count up to two by graph-geodesic farthest points."""
    graph = _region_vertex_graph(mesh, faces)
    out = list(existing)
    if len(out) == 0:
        q0 = int(np.min(boundary_verts))
        q1 = _farthest_boundary_vertex(graph, q0, boundary_verts)
        q2 = _farthest_boundary_vertex(graph, q1, boundary_verts, exclude={q1})
        out.extend(sorted({q1, q2} - {-1}))
    elif len(out) == 1:
        q = _farthest_boundary_vertex(graph, out[0], boundary_verts,
                                      exclude={out[0]})
        if q >= 0:
            out.append(q)
    return sorted(out)


# ---------------------------------------------------------------------------
# region plans


@dataclass
class _Plan:
    faces: np.ndarray
    kind: str                      # "single" | "multi"
    splits: list[int]
    frontier: np.ndarray | None = None
    seam_edges: list[int] = _dc_field(default_factory=list)
    centroid_face: int = -1
    edge_label: dict | None = None
    n_labels: int = 0
    split_edges: list[int] = _dc_field(default_factory=list)
    warnings: list[str] = _dc_field(default_factory=list)


def _single_face_choice(mesh: TriangleMesh, f: int, splits: list[int]):
    el = [int(e) for e in mesh.face_edges[f]]
    lens = mesh.edge_lengths()

    def longest(cands):
        return min(cands, key=lambda e: (-lens[e], e))

    if len(splits) == 0:
        return ("edge", longest(el))
    if len(splits) == 1:
        q = splits[0]
        inc = [e for e in el if q in mesh.edges[e]]
        return ("edge", longest(inc))
    if len(splits) == 2:
        q1, q2 = splits
        for e in el:
            a, b = mesh.edges[e]
            if {int(a), int(b)} == {q1, q2}:
                return ("edge", int(e))
        return ("edge", longest(el))  # degenerate: not a face edge
    return ("centroid", -1)


def _plan_single(mesh: TriangleMesh, f: int, splits: list[int]) -> _Plan:
    kind, val = _single_face_choice(mesh, f, splits)
    plan = _Plan(faces=np.asarray([f], dtype=np.int64), kind="single",
                 splits=splits)
    if kind == "edge":
        plan.seam_edges = [val]
    else:
        plan.centroid_face = f
    return plan


def _plan_multi(mesh: TriangleMesh, faces: np.ndarray,
                splits: list[int]) -> _Plan:
    in_region = np.zeros(mesh.n_faces, dtype=bool)
    in_region[faces] = True
    frontier = _region_frontier(mesh, in_region, faces)
    plan = _Plan(faces=faces, kind="multi", splits=list(splits),
                 frontier=frontier)

    chains, open_found = _boundary_chains(mesh, frontier)
    if open_found:
        plan.warnings.append("region boundary does not close into loops")
    if len(chains) > 1:
        plan.warnings.append("region boundary has multiple loops")

    if len(plan.splits) < 2:
        bverts = np.unique(mesh.edges[frontier].ravel())
        plan.splits = virtual_splits(mesh, faces, bverts, plan.splits)

    plan.edge_label, plan.n_labels = _segment_labels(mesh, chains,
                                                     set(plan.splits))

    frontier_set = set(int(e) for e in frontier)
    split_edges = set()
    for f in faces:
        el = [int(e) for e in mesh.face_edges[f]]
        fr = [e for e in el if e in frontier_set]
        labs = {plan.edge_label[e] for e in fr}
        if len(fr) == 2 and len(labs) == 2:
            # one clean cut through this face: split only the interior edge
            split_edges.update(e for e in el if e not in frontier_set)
        else:
            split_edges.update(el)
    plan.split_edges = sorted(split_edges)
    return plan


# ---------------------------------------------------------------------------
# face subdivision


class _Editor:
    """Accumulates midpoint/centroid insertions, then rebuilds the mesh."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        self.extra: list[np.ndarray] = []
        self.mid: dict[int, int] = {}
        self.cent: dict[int, int] = {}

    def _add_vertex(self, p) -> int:
        vid = self.mesh.n_vertices + len(self.extra)
        self.extra.append(np.asarray(p, dtype=np.float64))
        return vid

    def midpoint(self, e: int) -> int:
        vid = self.mid.get(e)
        if vid is None:
            a, b = self.mesh.edges[e]
            vid = self._add_vertex(
                0.5 * (self.mesh.vertices[a] + self.mesh.vertices[b]))
            self.mid[e] = vid
        return vid

    def centroid(self, f: int) -> int:
        vid = self.cent.get(f)
        if vid is None:
            vid = self._add_vertex(self.mesh.vertices[self.mesh.faces[f]]
                                   .mean(axis=0))
            self.cent[f] = vid
        return vid

    def touched(self) -> bool:
        return bool(self.mid or self.cent)

    def _edge_pieces(self, f: int):
        """Directed boundary pieces of face f honoring midpoints."""
        tri = self.mesh.faces[f]
        pieces = []
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            m = self.mid.get(int(self.mesh.face_edges[f][k]))
            if m is None:
                pieces.append((a, b))
            else:
                pieces.append((a, m))
                pieces.append((m, b))
        return pieces

    def _face_triples(self, f: int):
        if f in self.cent:
            g = self.cent[f]
            return [(a, b, g) for a, b in self._edge_pieces(f)]
        tri = self.mesh.faces[f]
        v0, v1, v2 = (int(v) for v in tri)
        el = self.mesh.face_edges[f]
        a = self.mid.get(int(el[0]), -1)   # on (v0, v1)
        b = self.mid.get(int(el[1]), -1)   # on (v1, v2)
        c = self.mid.get(int(el[2]), -1)   # on (v2, v0)
        have = (a >= 0, b >= 0, c >= 0)
        if have == (False, False, False):
            return [(v0, v1, v2)]
        if have == (True, False, False):
            return [(v0, a, v2), (a, v1, v2)]
        if have == (False, True, False):
            return [(v1, b, v0), (b, v2, v0)]
        if have == (False, False, True):
            return [(v2, c, v1), (c, v0, v1)]
        if have == (True, True, False):
            return [(a, v1, b), (v0, a, b), (v0, b, v2)]
        if have == (False, True, True):
            return [(b, v2, c), (v1, b, c), (v1, c, v0)]
        if have == (True, False, True):
            return [(c, v0, a), (v2, c, a), (v2, a, v1)]
        return [(v0, a, c), (a, v1, b), (c, b, v2), (a, b, c)]

    def build(self):
        mesh = self.mesh
        if not self.touched():
            return mesh, np.arange(mesh.n_faces, dtype=np.int64)
        faces_out = []
        parents = []
        for f in range(mesh.n_faces):
            for tri in self._face_triples(f):
                faces_out.append(tri)
                parents.append(f)
        V = np.vstack([mesh.vertices] + [p[None, :] for p in self.extra])
        new = TriangleMesh(V, np.asarray(faces_out, dtype=np.int64))
        return new, np.asarray(parents, dtype=np.int64)

    def resolve_edge(self, e: int):
        """Vertex pairs covering original edge e after subdivision."""
        a, b = (int(v) for v in self.mesh.edges[e])
        m = self.mid.get(int(e))
        if m is None:
            return [(a, b)]
        return [(a, m), (m, b)]


# ---------------------------------------------------------------------------
# graph cut per region


def _cut_region(new_mesh: TriangleMesh, parent: np.ndarray, plan: _Plan,
                editor: _Editor, lambda_label: float):
    """Label the region's sub-faces and return inter-label sub-edges."""
    in_region = np.zeros(editor.mesh.n_faces, dtype=bool)
    in_region[plan.faces] = True
    sub = np.flatnonzero(in_region[parent])
    n_sub = len(sub)
    pos = {int(f): i for i, f in enumerate(sub)}

    # pre-labels from frontier sub-edges
    pair_label = {}
    for e in plan.frontier:
        lab = plan.edge_label[int(e)]
        for a, b in editor.resolve_edge(int(e)):
            pair_label[(min(a, b), max(a, b))] = lab
    elen = new_mesh.edge_lengths()
    fixed = np.full(n_sub, -1, dtype=np.int64)
    for i, f in enumerate(sub):
        attached = []
        for e in new_mesh.face_edges[f]:
            a, b = (int(v) for v in new_mesh.edges[e])
            lab = pair_label.get((min(a, b), max(a, b)))
            if lab is not None:
                attached.append((lab, float(elen[e])))
        if attached:
            # normally a single edge; break rare multi-attachment ties by
            # the longer edge, then the smaller label
            attached.sort(key=lambda t: (-t[1], t[0]))
            fixed[i] = attached[0][0]

    # dual graph of the region's sub-faces
    cent = new_mesh.face_centroids()
    dual_e = []
    dual_w = []
    dual_len = []
    pairs_all = []
    for e in new_mesh.interior_edges:
        f0, f1 = new_mesh.edge_faces[e]
        if in_region[parent[f0]] and in_region[parent[f1]]:
            i, j = pos[int(f0)], pos[int(f1)]
            pairs_all.append((i, j, int(e)))
            dual_e.append((i, j))
            dual_len.append(float(elen[e]))
            dual_w.append(float(np.linalg.norm(cent[f0] - cent[f1])))

    n_labels = plan.n_labels
    data = np.zeros((n_sub, n_labels))
    if dual_e:
        rows = [p[0] for p in dual_e]
        cols = [p[1] for p in dual_e]
        g = sp.coo_matrix((dual_w, (rows, cols)), shape=(n_sub, n_sub))
        for lab in range(n_labels):
            src = np.flatnonzero(fixed == lab)
            if len(src) == 0:
                data[:, lab] = UNREACHABLE
                continue
            d = csgraph.dijkstra(g, directed=False, indices=src, min_only=True)
            d[~np.isfinite(d)] = UNREACHABLE
            data[:, lab] = lambda_label * d
    data[fixed >= 0] = 0.0

    free_pairs = [(i, j) for (i, j) in dual_e
                  if fixed[i] < 0 or fixed[j] < 0]
    free_w = [w for (i, j), w in zip(dual_e, dual_len)
              if fixed[i] < 0 or fixed[j] < 0]
    problem = LabelingProblem(
        data_cost=data,
        edges=np.asarray(free_pairs, dtype=np.int64).reshape(-1, 2),
        weights=np.asarray(free_w, dtype=np.float64),
        fixed=fixed)
    labels = alpha_expansion(problem)

    seams = [eid for (i, j, eid) in pairs_all if labels[i] != labels[j]]
    label_map = {int(sub[i]): int(labels[i]) for i in range(n_sub)}
    return seams, label_map


# ---------------------------------------------------------------------------
# standalone case operations (used by the driver and directly testable)


def seams_single_face(mesh: TriangleMesh, f: int, splits: list[int]):
    """Seam choice for a one-face region.

    Returns (mesh, seam_edge_ids); the mesh is rebuilt only in the
    three-split case, where the face is fanned around its centroid.
    """
    kind, val = _single_face_choice(mesh, f, sorted(splits))
    if kind == "edge":
        return mesh, [val]
    editor = _Editor(mesh)
    g = editor.centroid(f)
    corners = [int(v) for v in mesh.faces[f]]
    new_mesh, _ = editor.build()
    seams = [new_mesh.edge_index(v, g) for v in corners]
    return new_mesh, sorted(seams)


def seams_multi_face(mesh: TriangleMesh, faces: np.ndarray,
                     splits: list[int],
                     lambda_label: float = LAMBDA_LABEL):
    """Constructed seams for a multi-face region (boundary-segment labels,
    subdivision, multi-label cut).

    Returns (new_mesh, seam_edge_ids, sub_face_labels)."""
    faces = np.asarray(sorted(int(f) for f in faces), dtype=np.int64)
    plan = _plan_multi(mesh, faces, sorted(splits))
    editor = _Editor(mesh)
    for e in plan.split_edges:
        editor.midpoint(e)
    new_mesh, parent = editor.build()
    seams, labels = _cut_region(new_mesh, parent, plan, editor, lambda_label)
    return new_mesh, sorted(seams), labels


# ---------------------------------------------------------------------------
# field transfer to the subdivided mesh


def inherit_field(mesh: TriangleMesh, fld: RulingField,
                  new_mesh: TriangleMesh, parent: np.ndarray) -> RulingField:
    """Re-anchor the ruling pencil of each parent face at the sub-face
    centroid; the line field is unchanged (the local model is a pencil, so
    moving the anchor only rescales gamma)."""
    old_frames = face_frames(mesh.vertices, mesh.faces)
    r, c = face_ruling_dirs(old_frames, fld)
    new_frames = face_frames(new_mesh.vertices, new_mesh.faces)
    rel = new_frames.o - old_frames.o[parent]
    x = np.einsum("ij,ij->i", rel, r[parent])
    y = np.einsum("ij,ij->i", rel, c[parent])
    g = fld.gamma[parent]
    rbar = (1.0 + g * x)[:, None] * r[parent] + (g * y)[:, None] * c[parent]
    k = np.linalg.norm(rbar, axis=1)
    k = np.maximum(k, 1e-300)
    rdir = rbar / k[:, None]
    a, b = _to_edge_coeffs(new_frames, rdir)
    return RulingField(a=a, b=b, gamma=g / k)


def _clamp_infeasible(new_mesh: TriangleMesh, fld: RulingField) -> int:
    margins = feasibility_margins(new_mesh, fld)
    bad = np.flatnonzero(margins <= 1e-12)
    for f in bad:
        g = fld.gamma[f]
        if g == 0.0:
            continue
        worst = (margins[f] - 1.0) / g
        fld.gamma[f] = 0.9 * np.sign(g) / abs(worst)
    return len(bad)


# ---------------------------------------------------------------------------
# post-extraction field cleanup


def postprocess_field(mesh: TriangleMesh, fld: RulingField,
                      region_faces: np.ndarray, seam_edges: np.ndarray,
                      rel_tol: float = 1e-6, max_iter: int = 200):
    """Minimize the geodesic mismatch over non-seam interior edges inside
    the dissolved regions, moving only those faces' ruling coefficients.
    Returns (field, iterations)."""
    S = np.unique(np.asarray(region_faces, dtype=np.int64))
    if len(S) == 0:
        return fld, 0
    in_s = np.zeros(mesh.n_faces, dtype=bool)
    in_s[S] = True
    seam = np.zeros(mesh.n_edges, dtype=bool)
    seam[np.asarray(seam_edges, dtype=np.int64)] = True
    sel = [int(e) for e in mesh.interior_edges
           if not seam[e]
           and in_s[mesh.edge_faces[e, 0]] and in_s[mesh.edge_faces[e, 1]]]
    if not sel:
        return fld, 0

    frames = face_frames(mesh.vertices, mesh.faces)
    V = mesh.vertices
    ns = len(S)
    spos = {int(f): i for i, f in enumerate(S)}
    ev = mesh.edges[sel]
    ef = mesh.edge_faces[sel]
    fi = np.asarray([spos[int(f)] for f in ef[:, 0]], dtype=np.int32)
    fj = np.asarray([spos[int(f)] for f in ef[:, 1]], dtype=np.int32)
    va = V[ev[:, 0]]
    vb = V[ev[:, 1]]
    evec = vb - va
    ehat = evec / np.linalg.norm(evec, axis=1, keepdims=True)
    ts = np.asarray(EDGE_SAMPLES)
    P = va[:, None, :] + ts[None, :, None] * evec[:, None, :]

    oS = jnp.asarray(frames.o[S])
    nS = jnp.asarray(frames.n[S])
    d1S = jnp.asarray(frames.d1[S])
    d2S = jnp.asarray(frames.d2[S])
    Pj = jnp.asarray(P)
    ehat_j = jnp.asarray(ehat)
    fi_j = jnp.asarray(fi)
    fj_j = jnp.asarray(fj)

    def energy(x):
        aS = x[:ns]
        bS = x[ns:2 * ns]
        gS = x[2 * ns:]
        raw = aS[:, None] * d1S + bS[:, None] * d2S
        r = raw / jnp.linalg.norm(raw, axis=1, keepdims=True)
        c = jnp.cross(nS, r)

        def side(fk):
            rel = Pj - oS[fk][:, None, :]
            xs = jnp.einsum("ekj,ej->ek", rel, r[fk])
            ys = jnp.einsum("ekj,ej->ek", rel, c[fk])
            g = gS[fk]
            rb = (1.0 + g[:, None, None] * xs[:, :, None]) * r[fk][:, None, :] \
                + (g[:, None] * ys)[:, :, None] * c[fk][:, None, :]
            sk = rb / jnp.linalg.norm(rb, axis=2, keepdims=True)
            t2 = jnp.cross(ehat_j, nS[fk])
            u = jnp.einsum("ekj,ej->ek", sk, ehat_j)
            v = jnp.einsum("ekj,ej->ek", sk, t2)
            return jnp.stack([u, v], axis=2)

        return jnp.sum((side(fi_j) - side(fj_j)) ** 2)

    vg = jax.jit(jax.value_and_grad(energy))

    def fun_grad(x):
        v, g = vg(jnp.asarray(x))
        return float(v), np.asarray(g)

    corners = V[mesh.faces[S]]  # (ns, 3, 3)
    oSn = frames.o[S]
    d1Sn = frames.d1[S]
    d2Sn = frames.d2[S]

    def feasible(x):
        aS = x[:ns]
        bS = x[ns:2 * ns]
        gS = x[2 * ns:]
        raw = aS[:, None] * d1Sn + bS[:, None] * d2Sn
        nr = np.linalg.norm(raw, axis=1)
        if np.any(nr < 1e-12):
            return False
        r = raw / nr[:, None]
        m = np.inf
        for i in range(3):
            xs = np.einsum("ij,ij->i", corners[:, i] - oSn, r)
            m = min(m, float(np.min(1.0 + gS * xs)))
        return m > 0.0

    x0 = np.concatenate([fld.a[S], fld.b[S], fld.gamma[S]])
    res = lbfgs_minimize(fun_grad, x0, feasible=feasible,
                         rel_tol=rel_tol, max_iter=max_iter)
    out = fld.copy()
    out.a[S] = res.x[:ns]
    out.b[S] = res.x[ns:2 * ns]
    out.gamma[S] = res.x[2 * ns:]
    return out, res.n_iter


# ---------------------------------------------------------------------------
# seam polylines and patch labels


def chain_edge_polylines(mesh: TriangleMesh, edge_ids: np.ndarray):
    """Chain an edge set into polylines (vertex id sequences).

    Open chains start and end at vertices whose degree in the set differs
    from 2; what remains afterwards is emitted as closed loops.
    """
    edge_ids = sorted(int(e) for e in edge_ids)
    inc: dict[int, list[int]] = {}
    for e in edge_ids:
        a, b = (int(v) for v in mesh.edges[e])
        inc.setdefault(a, []).append(e)
        inc.setdefault(b, []).append(e)
    for v in inc:
        inc[v].sort()
    used = set()

    def walk(v0, e0):
        verts = [v0]
        e = e0
        v = v0
        while True:
            used.add(e)
            a, b = (int(u) for u in mesh.edges[e])
            v = b if a == v else a
            verts.append(v)
            if len(inc[v]) != 2:
                break
            nxt = next((x for x in inc[v] if x not in used), None)
            if nxt is None:
                break
            e = nxt
        return verts

    chains = []
    for v0 in sorted(inc):
        if len(inc[v0]) == 2:
            continue
        for e0 in inc[v0]:
            if e0 not in used:
                chains.append(walk(v0, e0))
    for e0 in edge_ids:  # leftover loops
        if e0 in used:
            continue
        v0 = int(mesh.edges[e0][0])
        chains.append(walk(v0, e0))
    return [np.asarray(c, dtype=np.int64) for c in chains]


def patch_labels(mesh: TriangleMesh, seam_edges: np.ndarray):
    """Connected face components when seam edges are treated as cuts."""
    seam = np.zeros(mesh.n_edges, dtype=bool)
    seam[np.asarray(seam_edges, dtype=np.int64)] = True
    int_e = mesh.interior_edges
    open_e = int_e[~seam[int_e]]
    ef = mesh.edge_faces[open_e]
    nf = mesh.n_faces
    g = sp.coo_matrix((np.ones(len(ef)), (ef[:, 0], ef[:, 1])),
                      shape=(nf, nf))
    n, comp = csgraph.connected_components(g, directed=False)
    # canonical order: label by first appearance
    remap = {}
    out = np.empty(nf, dtype=np.int64)
    for f in range(nf):
        out[f] = remap.setdefault(comp[f], len(remap))
    return out, len(remap)


# ---------------------------------------------------------------------------
# driver


@dataclass
class SeamOptions:
    eps_edge: float
    eps_area_frac: float = EPS_AREA_FRAC
    lambda_label: float = LAMBDA_LABEL
    postprocess: bool = True
    post_rel_tol: float = 1e-6
    post_max_iter: int = 200


@dataclass
class SeamResult:
    mesh: TriangleMesh
    field: RulingField
    theta: np.ndarray
    mu: np.ndarray
    seam_edges: np.ndarray
    patch_label: np.ndarray
    n_patches: int
    seam_polylines: list
    candidates: np.ndarray
    kept_candidates: np.ndarray
    regions: list
    face_parent: np.ndarray
    warnings: list
    n_island_faces: int = 0
    post_iterations: int = 0
    clamped_faces: int = 0


def extract_seams(mesh: TriangleMesh, fld: RulingField, theta: np.ndarray,
                  mu: np.ndarray, e_comb: np.ndarray,
                  options: SeamOptions) -> SeamResult:
    """Run the full seam stage on a joint-optimization result."""
    warnings: list[str] = []
    candidates = extract_candidates(mesh, e_comb, options.eps_edge)
    closed = not bool(mesh.boundary_edge.any())
    if closed and len(candidates) == 0:
        raise SeamExtractionError(
            "closed surface produced no seam candidates; a closed surface "
            "cannot be approximated by a single ruled patch. Lower nu_min "
            "(or eps_edge) so that seams can form.")

    fb_faces, regions, n_island = build_cleanup_set(
        mesh, candidates, options.eps_area_frac)
    in_fb = np.zeros(mesh.n_faces, dtype=bool)
    in_fb[fb_faces] = True

    # candidates that survive the cleanup untouched
    kept = []
    for e in candidates:
        f0, f1 = mesh.edge_faces[e]
        if in_fb[f0] or (f1 >= 0 and in_fb[f1]):
            continue
        kept.append(int(e))
    kept = np.asarray(kept, dtype=np.int64)

    # plan every region
    plans = []
    for faces in regions:
        in_region = np.zeros(mesh.n_faces, dtype=bool)
        in_region[faces] = True
        frontier = _region_frontier(mesh, in_region, faces)
        splits = split_vertices_of_region(mesh, in_region, frontier,
                                          candidates)
        if len(faces) == 1:
            plans.append(_plan_single(mesh, int(faces[0]), splits))
        else:
            plans.append(_plan_multi(mesh, faces, splits))
    for p in plans:
        warnings.extend(p.warnings)

    # apply all subdivisions through one editor
    editor = _Editor(mesh)
    for p in plans:
        for e in p.split_edges:
            editor.midpoint(e)
    for p in plans:
        if p.centroid_face >= 0:
            editor.centroid(p.centroid_face)
    new_mesh, parent = editor.build()

    # seams: kept candidates, single-face picks, centroid fans, cuts
    seam_pairs = []
    for e in kept:
        seam_pairs.extend(editor.resolve_edge(int(e)))
    for p in plans:
        for e in p.seam_edges:
            seam_pairs.extend(editor.resolve_edge(int(e)))
        if p.centroid_face >= 0:
            g = editor.cent[p.centroid_face]
            for v in mesh.faces[p.centroid_face]:
                seam_pairs.append((int(v), g))
    seam_ids = set(new_mesh.edge_index(a, b) for a, b in seam_pairs)
    for p in plans:
        if p.kind == "multi":
            cut, _ = _cut_region(new_mesh, parent, p, editor,
                                 options.lambda_label)
            seam_ids.update(cut)
    seam_edges = np.asarray(sorted(seam_ids), dtype=np.int64)

    # transfer the field and the second-fundamental-form parameters
    if editor.touched():
        new_fld = inherit_field(mesh, fld, new_mesh, parent)
    else:
        new_fld = fld.copy()
    new_theta = np.asarray(theta, dtype=np.float64)[parent]
    new_mu = np.asarray(mu, dtype=np.float64)[parent]
    clamped = _clamp_infeasible(new_mesh, new_fld)
    if clamped:
        warnings.append(f"{clamped} sub-faces needed a gamma clamp to stay "
                        "feasible after subdivision")

    post_iters = 0
    if options.postprocess and plans:
        in_region_old = np.zeros(mesh.n_faces, dtype=bool)
        for p in plans:
            in_region_old[p.faces] = True
        region_new = np.flatnonzero(in_region_old[parent])
        new_fld, post_iters = postprocess_field(
            new_mesh, new_fld, region_new, seam_edges,
            rel_tol=options.post_rel_tol, max_iter=options.post_max_iter)

    label, n_patches = patch_labels(new_mesh, seam_edges)
    if closed and n_patches == 1 and len(seam_edges) > 0:
        warnings.append("seams do not separate the closed surface; the "
                        "single patch has no boundary")

    return SeamResult(
        mesh=new_mesh,
        field=new_fld,
        theta=new_theta,
        mu=new_mu,
        seam_edges=seam_edges,
        patch_label=label,
        n_patches=n_patches,
        seam_polylines=chain_edge_polylines(new_mesh, seam_edges),
        candidates=candidates,
        kept_candidates=kept,
        regions=[p.faces for p in plans],
        face_parent=parent,
        warnings=warnings,
        n_island_faces=n_island,
        post_iterations=post_iters,
        clamped_faces=clamped,
    )
