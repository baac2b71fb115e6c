"""Geometric primitives shared by the optimizers.

Face frames, edge unfolding, shared-edge bases, discrete curvature
estimation, the per-vertex Gaussian curvature operator, and graph geodesic
distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .mesh import TriangleMesh


@dataclass
class FaceFrames:
    """Per-face centroid o, unit normal n, edge vectors d1 = v2-v1, d2 = v3-v1."""

    o: np.ndarray
    n: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def face_frames(vertices: np.ndarray, faces: np.ndarray) -> FaceFrames:
    p0 = vertices[faces[:, 0]]
    d1 = vertices[faces[:, 1]] - p0
    d2 = vertices[faces[:, 2]] - p0
    n = np.cross(d1, d2)
    n = n / np.linalg.norm(n, axis=1)[:, None]
    o = (p0 + vertices[faces[:, 1]] + vertices[faces[:, 2]]) / 3.0
    return FaceFrames(o=o, n=n, d1=d1, d2=d2)


def mesh_face_frames(mesh: TriangleMesh) -> FaceFrames:
    return face_frames(mesh.vertices, mesh.faces)


@dataclass
class SharedEdgeBases:
    """Bases [e, e x n_i], [e, e x n_j] of the two faces at an interior edge.

    Coordinates taken in these bases agree for vectors that align after the
    faces are unfolded about the edge.
    """

    edge: int
    e_hat: np.ndarray
    Bi: np.ndarray  # (3, 2)
    Bj: np.ndarray  # (3, 2)
    fi: int
    fj: int


def shared_edge_bases(mesh: TriangleMesh, edge: int) -> SharedEdgeBases:
    if mesh.boundary_edge[edge]:
        raise ValueError(f"edge {edge} is a boundary edge")
    va, vb = mesh.edges[edge]
    e = mesh.vertices[vb] - mesh.vertices[va]
    e_hat = e / np.linalg.norm(e)
    fi, fj = mesh.edge_faces[edge]
    frames = mesh_face_frames(mesh)
    Bi = np.stack([e_hat, np.cross(e_hat, frames.n[fi])], axis=1)
    Bj = np.stack([e_hat, np.cross(e_hat, frames.n[fj])], axis=1)
    return SharedEdgeBases(edge=edge, e_hat=e_hat, Bi=Bi, Bj=Bj, fi=int(fi), fj=int(fj))


@dataclass
class UnfoldedNeighbor:
    """Centroid of f2 unfolded into f1's plane about their shared edge."""

    f: int
    f_other: int
    obar: np.ndarray
    disp: np.ndarray  # obar - centroid of f


def _shared_edge_of(mesh: TriangleMesh, f: int, g: int) -> int:
    shared = set(mesh.face_edges[f]) & set(mesh.face_edges[g])
    if len(shared) != 1:
        raise ValueError(f"faces {f} and {g} do not share exactly one edge")
    return shared.pop()


def unfold_point(p1, e_hat, n_f, o_f, x):
    """Rotate point x (in the neighbor's plane) about the edge line through
    p1 with direction e_hat, into the plane of face f, on the side away
    from f's interior. Isometric for points of the neighbor face."""
    w = x - p1
    along = w @ e_hat
    m = np.cross(n_f, e_hat)
    rho = np.linalg.norm(w - along * e_hat)
    side = -np.sign((o_f - p1) @ m)
    return p1 + along * e_hat + rho * side * m


def unfold_neighbor(mesh: TriangleMesh, f: int, g: int) -> UnfoldedNeighbor:
    if f == g:
        raise ValueError("cannot unfold a face onto itself")
    edge = _shared_edge_of(mesh, f, g)
    va, vb = mesh.edges[edge]
    p1 = mesh.vertices[va]
    e = mesh.vertices[vb] - p1
    e_hat = e / np.linalg.norm(e)
    frames = mesh_face_frames(mesh)
    obar = unfold_point(p1, e_hat, frames.n[f], frames.o[f], frames.o[g])
    return UnfoldedNeighbor(f=f, f_other=g, obar=obar, disp=obar - frames.o[f])


@dataclass
class PrincipalEstimate:
    """Per-face principal directions/curvatures with |k1| >= |k2|."""

    e1: np.ndarray
    e2: np.ndarray
    k1: np.ndarray
    k2: np.ndarray

    @property
    def K(self) -> np.ndarray:
        return self.k1 * self.k2


def estimate_principal(mesh: TriangleMesh) -> PrincipalEstimate:
    """Least-squares fit of the per-face shape operator from adjacent face
    normal differences; displacements measured after unfolding into the
    face plane. Faces with fewer than two edge neighbors fall back to the
    vertex one-ring with tangent-projected displacements."""
    frames = mesh_face_frames(mesh)
    nf = mesh.n_faces
    V = mesh.vertices
    t1 = frames.d1 / np.linalg.norm(frames.d1, axis=1)[:, None]
    t2 = np.cross(frames.n, t1)

    neighbors: list[list[int]] = [[] for _ in range(nf)]
    edge_of: list[dict[int, int]] = [dict() for _ in range(nf)]
    for e in mesh.interior_edges:
        fi, fj = mesh.edge_faces[e]
        neighbors[fi].append(fj)
        neighbors[fj].append(fi)
        edge_of[fi][fj] = e
        edge_of[fj][fi] = e

    k1 = np.zeros(nf)
    k2 = np.zeros(nf)
    e1 = np.zeros((nf, 3))
    e2 = np.zeros((nf, 3))
    for f in range(nf):
        nbrs = neighbors[f]
        rows = []
        rhs = []
        for g in nbrs:
            e = edge_of[f][g]
            va, vb = mesh.edges[e]
            p1 = V[va]
            ev = V[vb] - p1
            e_hat = ev / np.linalg.norm(ev)
            obar = unfold_point(p1, e_hat, frames.n[f], frames.o[f], frames.o[g])
            u = obar - frames.o[f]
            dn = frames.n[g] - frames.n[f]
            u2 = np.array([u @ t1[f], u @ t2[f]])
            y2 = np.array([dn @ t1[f], dn @ t2[f]])
            rows.append([u2[0], u2[1], 0.0])
            rows.append([0.0, u2[0], u2[1]])
            rhs.extend(y2)
        if len(nbrs) < 2:
            # one-ring fallback: vertex-adjacent faces, tangent-projected
            ring = set()
            for v in mesh.faces[f]:
                ring.update(mesh.faces_of_vertex(int(v)).tolist())
            ring.discard(f)
            for g in sorted(ring - set(nbrs)):
                u = frames.o[g] - frames.o[f]
                dn = frames.n[g] - frames.n[f]
                u2 = np.array([u @ t1[f], u @ t2[f]])
                y2 = np.array([dn @ t1[f], dn @ t2[f]])
                rows.append([u2[0], u2[1], 0.0])
                rows.append([0.0, u2[0], u2[1]])
                rhs.extend(y2)
        A = np.asarray(rows)
        b = np.asarray(rhs)
        AtA = A.T @ A + 1e-14 * np.eye(3)
        s11, s12, s22 = np.linalg.solve(AtA, A.T @ b)
        # symmetric 2x2 eigen decomposition, closed form
        h = 0.5 * (s11 + s22)
        r = np.hypot(0.5 * (s11 - s22), s12)
        la, lb = h + r, h - r
        phi = 0.5 * np.arctan2(2.0 * s12, s11 - s22)
        va_dir = np.cos(phi) * t1[f] + np.sin(phi) * t2[f]
        vb_dir = -np.sin(phi) * t1[f] + np.cos(phi) * t2[f]
        if abs(abs(la) - abs(lb)) < 1e-12:
            # tie: e1 takes the candidate better aligned with d1
            if abs(vb_dir @ t1[f]) > abs(va_dir @ t1[f]):
                la, lb = lb, la
                va_dir, vb_dir = vb_dir, va_dir
        elif abs(lb) > abs(la):
            la, lb = lb, la
            va_dir, vb_dir = vb_dir, va_dir
        k1[f], k2[f] = la, lb
        e1[f] = va_dir
        e2[f] = np.cross(frames.n[f], va_dir)
    return PrincipalEstimate(e1=e1, e2=e2, k1=k1, k2=k2)


def face_corner_angles(mesh: TriangleMesh) -> np.ndarray:
    """(nf, 3) interior angle at each face corner."""
    V, F = mesh.vertices, mesh.faces
    angles = np.zeros((len(F), 3))
    for k in range(3):
        a = V[F[:, k]]
        b = V[F[:, (k + 1) % 3]]
        c = V[F[:, (k + 2) % 3]]
        u = b - a
        w = c - a
        cosang = np.einsum("ij,ij->i", u, w) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        angles[:, k] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return angles


def mixed_voronoi_areas(mesh: TriangleMesh) -> np.ndarray:
    """Per-vertex mixed area: Voronoi area inside non-obtuse triangles,
    T/2 at the obtuse corner and T/4 at the other corners otherwise."""
    V, F = mesh.vertices, mesh.faces
    angles = face_corner_angles(mesh)
    areas = mesh.face_areas()
    out = np.zeros(mesh.n_vertices)
    obtuse_at = np.argmax(angles, axis=1)
    is_obtuse = angles.max(axis=1) > np.pi / 2
    cot = 1.0 / np.tan(angles)
    for k in range(3):
        vi = F[:, k]
        vj = F[:, (k + 1) % 3]
        vk = F[:, (k + 2) % 3]
        # Voronoi contribution at corner k of a non-obtuse triangle
        lij2 = np.einsum("ij,ij->i", V[vj] - V[vi], V[vj] - V[vi])
        lik2 = np.einsum("ij,ij->i", V[vk] - V[vi], V[vk] - V[vi])
        voronoi = (lij2 * cot[:, (k + 2) % 3] + lik2 * cot[:, (k + 1) % 3]) / 8.0
        contrib = np.where(is_obtuse,
                           np.where(obtuse_at == k, areas / 2.0, areas / 4.0),
                           voronoi)
        np.add.at(out, vi, contrib)
    return out


def gaussian_curvature(mesh: TriangleMesh) -> np.ndarray:
    """Per-vertex Gaussian curvature operator (angle deficit over mixed
    area). Boundary vertices get NaN; the operator is undefined there."""
    angles = face_corner_angles(mesh)
    deficit = np.full(mesh.n_vertices, 2.0 * np.pi)
    np.subtract.at(deficit, mesh.faces.ravel(), angles.ravel())
    K = deficit / mixed_voronoi_areas(mesh)
    K[mesh.boundary_vertex] = np.nan
    return K


def gaussian_curvature_vertex(mesh: TriangleMesh, v: int) -> float:
    if mesh.boundary_vertex[v]:
        raise ValueError(f"vertex {v} is on the boundary")
    return float(gaussian_curvature(mesh)[v])


def _edge_graph(mesh: TriangleMesh):
    w = mesh.edge_lengths()
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    n = mesh.n_vertices
    return coo_matrix((np.concatenate([w, w]),
                       (np.concatenate([i, j]), np.concatenate([j, i]))),
                      shape=(n, n)).tocsr()


def graph_geodesic(mesh: TriangleMesh, sources) -> np.ndarray:
    """Shortest-path distance over the vertex-edge graph from the nearest
    source vertex. Unreachable vertices get inf."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    g = _edge_graph(mesh)
    d = dijkstra(g, directed=False, indices=sources)
    return d.min(axis=0) if d.ndim == 2 else d
