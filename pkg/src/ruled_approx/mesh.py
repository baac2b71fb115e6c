"""Triangle mesh container with OBJ I/O, normalization and adjacency tables.

The mesh is stored as an indexed face set plus a derived edge table. It is
treated as immutable after construction; pipeline steps that change
connectivity (face subdivision) build a new mesh instead of mutating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """Base class for mesh construction and I/O failures."""


class MeshParseError(MeshError):
    """Malformed OBJ record or out-of-range index."""


class MeshTopologyError(MeshError):
    """Non-manifold or inconsistently oriented connectivity."""


class MeshDegeneracyError(MeshError):
    """Zero-area face or degenerate bounding box."""


@dataclass(frozen=True)
class MeshTransform:
    """Uniform scale + translation mapping normalized coords back to input.

    normalized = (original - translation) * scale
    """

    scale: float
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")

    def to_normalized(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) * self.scale

    def to_original(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.translation


class TriangleMesh:
    """Indexed triangle mesh with edge adjacency.

    Attributes
    ----------
    vertices : (nv, 3) float64
    faces : (nf, 3) int64, ordered vertex triples
    edges : (ne, 2) int64, undirected, each row sorted ascending
    edge_faces : (ne, 2) int64, adjacent face indices, -1 when absent
    face_edges : (nf, 3) int64, edge index of (v0,v1), (v1,v2), (v2,v0)
    boundary_edge : (ne,) bool
    boundary_vertex : (nv,) bool
    """

    def __init__(self, vertices, faces):
        V = np.ascontiguousarray(vertices, dtype=np.float64)
        F = np.ascontiguousarray(faces, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 3:
            raise MeshParseError("vertices must be (n, 3)")
        if F.size == 0:
            raise MeshParseError("mesh has no faces")
        if F.ndim != 2 or F.shape[1] != 3:
            raise MeshParseError("faces must be (m, 3)")
        if F.min() < 0 or F.max() >= len(V):
            raise MeshParseError("face index out of range")
        if np.any(F[:, 0] == F[:, 1]) or np.any(F[:, 1] == F[:, 2]) or np.any(F[:, 0] == F[:, 2]):
            raise MeshParseError("face with repeated vertex")
        self.vertices = V
        self.faces = F
        self._check_degeneracy()
        self._build_edges()
        self._build_vertex_tables()

    # -- construction ------------------------------------------------------

    def _check_degeneracy(self):
        V, F = self.vertices, self.faces
        d = V.max(axis=0) - V.min(axis=0)
        diag2 = float(d @ d)
        if diag2 <= 0.0:
            raise MeshDegeneracyError("degenerate bounding box")
        cr = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
        areas = 0.5 * np.linalg.norm(cr, axis=1)
        bad = np.nonzero(areas <= 1e-12 * diag2)[0]
        if bad.size:
            raise MeshDegeneracyError(f"zero-area face {int(bad[0])}")

    def _build_edges(self):
        F = self.faces
        nf = len(F)
        # directed half edges per face corner: (v0,v1), (v1,v2), (v2,v0)
        he = np.stack([F, np.roll(F, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(he, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        if counts.max() > 2:
            e = uniq[np.argmax(counts)]
            raise MeshTopologyError(f"edge ({e[0]}, {e[1]}) has more than two adjacent faces")
        ne = len(uniq)
        self.edges = uniq
        self.face_edges = inv.reshape(nf, 3)
        edge_faces = np.full((ne, 2), -1, dtype=np.int64)
        forward = he[:, 0] < he[:, 1]  # direction relative to the sorted key
        face_of_he = np.repeat(np.arange(nf, dtype=np.int64), 3)
        for h in range(len(he)):
            e = inv[h]
            slot = 0 if forward[h] else 1
            if edge_faces[e, slot] != -1:
                raise MeshTopologyError(
                    f"inconsistent orientation at edge ({uniq[e, 0]}, {uniq[e, 1]})"
                )
            edge_faces[e, slot] = face_of_he[h]
        # keep slot 0 occupied for boundary edges
        swap = edge_faces[:, 0] == -1
        edge_faces[swap] = edge_faces[swap][:, ::-1]
        self.edge_faces = edge_faces
        self.boundary_edge = edge_faces[:, 1] == -1
        self.interior_edges = np.nonzero(~self.boundary_edge)[0]

    def _build_vertex_tables(self):
        nv = len(self.vertices)
        self.boundary_vertex = np.zeros(nv, dtype=bool)
        be = self.edges[self.boundary_edge]
        self.boundary_vertex[be.ravel()] = True
        # vertex -> vertex adjacency (CSR over undirected edges)
        pairs = np.concatenate([self.edges, self.edges[:, ::-1]], axis=0)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        self.vertex_adj_offsets = np.zeros(nv + 1, dtype=np.int64)
        np.add.at(self.vertex_adj_offsets, pairs[:, 0] + 1, 1)
        self.vertex_adj_offsets = np.cumsum(self.vertex_adj_offsets)
        self.vertex_adj = pairs[:, 1].copy()
        # vertex -> face adjacency (CSR)
        fidx = np.repeat(np.arange(len(self.faces), dtype=np.int64), 3)
        vidx = self.faces.ravel()
        order = np.lexsort((fidx, vidx))
        self.vertex_face_offsets = np.zeros(nv + 1, dtype=np.int64)
        np.add.at(self.vertex_face_offsets, vidx + 1, 1)
        self.vertex_face_offsets = np.cumsum(self.vertex_face_offsets)
        self.vertex_faces = fidx[order]

    # -- queries -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def vertex_neighbors(self, v: int) -> np.ndarray:
        o = self.vertex_adj_offsets
        return self.vertex_adj[o[v]:o[v + 1]]

    def faces_of_vertex(self, v: int) -> np.ndarray:
        o = self.vertex_face_offsets
        return self.vertex_faces[o[v]:o[v + 1]]

    def edge_index(self, a: int, b: int) -> int:
        lo, hi = (a, b) if a < b else (b, a)
        i = np.searchsorted(self.edges[:, 0], lo)
        while i < len(self.edges) and self.edges[i, 0] == lo:
            if self.edges[i, 1] == hi:
                return int(i)
            i += 1
        raise KeyError(f"no edge ({a}, {b})")

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    def face_areas(self) -> np.ndarray:
        V, F = self.vertices, self.faces
        cr = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def face_normals(self) -> np.ndarray:
        V, F = self.vertices, self.faces
        cr = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
        return cr / np.linalg.norm(cr, axis=1)[:, None]

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def bbox_diagonal(self) -> float:
        d = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(d))

    def mean_edge_length(self) -> float:
        return float(self.edge_lengths().mean())

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same connectivity, new vertex positions."""
        return TriangleMesh(vertices, self.faces)


def normalize_unit_diagonal(mesh: TriangleMesh) -> tuple[TriangleMesh, MeshTransform]:
    """Scale and translate so the bounding box diagonal has unit length.

    Returns the normalized mesh and the transform mapping it back to the
    input coordinates.
    """
    V = mesh.vertices
    lo, hi = V.min(axis=0), V.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0.0:
        raise MeshDegeneracyError("degenerate bounding box")
    t = MeshTransform(scale=1.0 / diag, translation=0.5 * (lo + hi))
    return TriangleMesh(t.to_normalized(V), mesh.faces), t


def load_obj(path) -> TriangleMesh:
    """Load an ASCII OBJ file. Polygons with more than 3 vertices are
    fan-triangulated anchored at the first polygon vertex."""
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshParseError(f"line {ln}: malformed vertex record")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise MeshParseError(f"line {ln}: {exc}") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshParseError(f"line {ln}: face with fewer than 3 vertices")
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise MeshParseError(f"line {ln}: bad face index {tok!r}") from exc
                    # OBJ indices are 1-based; negative counts from the end
                    i = i - 1 if i > 0 else len(verts) + i
                    if i < 0 or i >= len(verts):
                        raise MeshParseError(f"line {ln}: face index out of range")
                    idx.append(i)
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
            # all other record types are ignored
    if not verts:
        raise MeshParseError("no vertex records")
    if not faces:
        raise MeshParseError("no face records")
    return TriangleMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OBJ with 9 significant digits per coordinate."""
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
