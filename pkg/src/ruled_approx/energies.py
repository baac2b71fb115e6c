"""Differentiable energies for the joint shape / ruling field optimization.

Variables are packed as x = [vertices (3 nv), a, b, gamma, theta, mu (nf
each)]. Per interior edge, E_geod compares the normalized ruling
directions sampled at three edge points in hinge bases, and E_curv checks
a rank-constrained second fundamental form (principal curvatures mu
sin^2(theta), -mu cos^2(theta), which force the ruling to be asymptotic)
against the unfolded neighbor normals. Their sum feeds a Welsch robust
norm; closeness, barrier, Laplacian and edge-length terms complete the
objective. Footpoints enter as constants so the whole thing stays smooth;
the caller refreshes them between outer stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from jax import config as _jax_config

_jax_config.update("jax_enable_x64", True)

import jax
import jax.numpy as jnp

from .mesh import TriangleMesh

W_CLOSE = 1e3
W_BARR = 1e-6
W_LAP = 1e2
W_LEN = 1e2

EDGE_SAMPLES = (0.25, 0.5, 0.75)


@dataclass
class JointState:
    """Unpacked view of the optimization variables."""

    V: np.ndarray
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    mu: np.ndarray


class JointProblem:
    """Holds the frozen connectivity and the jitted energy callables."""

    def __init__(self, mesh: TriangleMesh, w_close=W_CLOSE, w_barr=W_BARR,
                 w_lap=W_LAP, w_len=W_LEN):
        self.mesh = mesh
        self.nv = mesh.n_vertices
        self.nf = mesh.n_faces
        self.w = (float(w_close), float(w_barr), float(w_lap), float(w_len))
        faces = mesh.faces.astype(np.int32)
        iedges = mesh.interior_edges.astype(np.int32)
        self.iedges = iedges
        ie_v = mesh.edges[iedges].astype(np.int32)
        ie_f = mesh.edge_faces[iedges].astype(np.int32)
        edges = mesh.edges.astype(np.int32)
        self.V0 = mesh.vertices.copy()
        self.h0 = mesh.edge_lengths()

        # Laplacian neighborhoods: boundary vertices only average adjacent
        # boundary vertices; pad to a rectangle for vectorized gathers
        neigh = []
        for v in range(self.nv):
            ns = list(mesh.vertex_neighbors(v))
            if mesh.boundary_vertex[v]:
                ns = [u for u in ns if mesh.boundary_vertex[u]]
            neigh.append(ns)
        maxdeg = max(len(ns) for ns in neigh)
        lap_idx = np.zeros((self.nv, maxdeg), dtype=np.int32)
        lap_w = np.zeros((self.nv, maxdeg))
        for v, ns in enumerate(neigh):
            lap_idx[v, :len(ns)] = ns
            if len(ns) > 0:
                lap_w[v, :len(ns)] = 1.0 / len(ns)

        w1, w2, w3, w4 = self.w
        V0 = jnp.asarray(self.V0)
        h0 = jnp.asarray(self.h0)
        faces_j = jnp.asarray(faces)
        edges_j = jnp.asarray(edges)
        ie_vj = jnp.asarray(ie_v)
        ie_fj = jnp.asarray(ie_f)
        lap_idx_j = jnp.asarray(lap_idx)
        lap_w_j = jnp.asarray(lap_w)
        nv, nf = self.nv, self.nf
        ts = jnp.asarray(EDGE_SAMPLES)

        def unpack(x):
            V = x[:3 * nv].reshape(nv, 3)
            a = x[3 * nv + 0 * nf: 3 * nv + 1 * nf]
            b = x[3 * nv + 1 * nf: 3 * nv + 2 * nf]
            g = x[3 * nv + 2 * nf: 3 * nv + 3 * nf]
            th = x[3 * nv + 3 * nf: 3 * nv + 4 * nf]
            mu = x[3 * nv + 4 * nf: 3 * nv + 5 * nf]
            return V, a, b, g, th, mu

        def frames(V):
            p0 = V[faces_j[:, 0]]
            d1 = V[faces_j[:, 1]] - p0
            d2 = V[faces_j[:, 2]] - p0
            nr = jnp.cross(d1, d2)
            n = nr / jnp.linalg.norm(nr, axis=1, keepdims=True)
            o = (p0 + V[faces_j[:, 1]] + V[faces_j[:, 2]]) / 3.0
            return o, n, d1, d2

        def field_dirs(V, a, b):
            o, n, d1, d2 = frames(V)
            raw = a[:, None] * d1 + b[:, None] * d2
            r = raw / jnp.linalg.norm(raw, axis=1, keepdims=True)
            c = jnp.cross(n, r)
            return o, n, r, c

        def ruling_samples(P, o_f, n_f, r_f, c_f, g_f):
            # P: (ne, k, 3) sample points on the shared edge
            rel = P - o_f[:, None, :]
            xs = jnp.einsum("ekj,ej->ek", rel, r_f)
            ys = jnp.einsum("ekj,ej->ek", rel, c_f)
            rb = (1.0 + g_f[:, None, None] * xs[:, :, None]) * r_f[:, None, :] \
                + (g_f[:, None] * ys)[:, :, None] * c_f[:, None, :]
            return rb / jnp.linalg.norm(rb, axis=2, keepdims=True)

        def e_comb(x):
            V, a, b, g, th, mu = unpack(x)
            o, n, r, c = field_dirs(V, a, b)
            va = V[ie_vj[:, 0]]
            vb = V[ie_vj[:, 1]]
            ev = vb - va
            ehat = ev / jnp.linalg.norm(ev, axis=1, keepdims=True)
            fi = ie_fj[:, 0]
            fj = ie_fj[:, 1]
            P = va[:, None, :] + ts[None, :, None] * ev[:, None, :]

            def side_coords(fk):
                sk = ruling_samples(P, o[fk], n[fk], r[fk], c[fk], g[fk])
                t2 = jnp.cross(ehat, n[fk])
                u = jnp.einsum("ekj,ej->ek", sk, ehat)
                v = jnp.einsum("ekj,ej->ek", sk, t2)
                return jnp.stack([u, v], axis=2)

            ci = side_coords(fi)
            cj = side_coords(fj)
            e_geod = jnp.sum((ci - cj) ** 2, axis=(1, 2))

            def sff(fa, fb_):
                # unfold fb_'s centroid into fa's plane about the shared edge
                p1 = va
                wv = o[fb_] - p1
                wpar = jnp.einsum("ej,ej->e", wv, ehat)[:, None] * ehat
                rho = jnp.linalg.norm(wv - wpar, axis=1)
                mvec = jnp.cross(n[fa], ehat)
                sgn = jax.lax.stop_gradient(
                    jnp.sign(jnp.einsum("ej,ej->e", o[fa] - p1, mvec)))
                dhat = -sgn[:, None] * mvec
                obar = p1 + wpar + rho[:, None] * dhat
                d = obar - o[fa]
                b1 = jnp.cos(th[fa])[:, None] * r[fa] + jnp.sin(th[fa])[:, None] * c[fa]
                b2 = -jnp.sin(th[fa])[:, None] * r[fa] + jnp.cos(th[fa])[:, None] * c[fa]
                k1 = mu[fa] * jnp.sin(th[fa]) ** 2
                k2 = -mu[fa] * jnp.cos(th[fa]) ** 2
                d1c = jnp.einsum("ej,ej->e", d, b1)
                d2c = jnp.einsum("ej,ej->e", d, b2)
                dn = n[fb_] - n[fa]
                n1c = jnp.einsum("ej,ej->e", dn, b1)
                n2c = jnp.einsum("ej,ej->e", dn, b2)
                num = (k1 * d1c - n1c) ** 2 + (k2 * d2c - n2c) ** 2
                return num / jnp.sum(d * d, axis=1)

            e_curv = sff(fi, fj) + sff(fj, fi)
            return e_geod + e_curv

        def feas_margins(x):
            V, a, b, g, th, mu = unpack(x)
            o, n, r, c = field_dirs(V, a, b)
            vals = []
            for i in range(3):
                rel = V[faces_j[:, i]] - o
                xs = jnp.einsum("ej,ej->e", rel, r)
                vals.append(1.0 + g * xs)
            return jnp.min(jnp.stack(vals, axis=1), axis=1)

        def total(x, nu, foot):
            V, a, b, g, th, mu = unpack(x)
            ec = e_comb(x)
            e_sparse = jnp.sum(1.0 - jnp.exp(-ec / (2.0 * nu * nu)))
            e_close = jnp.sum((V - foot) ** 2)

            o, n, r, c = field_dirs(V, a, b)
            barr = 0.0
            for i in range(3):
                rel = V[faces_j[:, i]] - o
                xs = jnp.einsum("ej,ej->e", rel, r)
                barr = barr + jnp.sum((1.0 + g * xs) ** -2)

            disp = V - V0
            mean = jnp.einsum("vk,vkj->vj", lap_w_j, disp[lap_idx_j])
            e_lap = jnp.sum((disp - mean) ** 2)

            he = jnp.linalg.norm(V[edges_j[:, 1]] - V[edges_j[:, 0]], axis=1)
            e_len = jnp.sum((he - h0) ** 2 / h0 ** 2)

            return e_sparse + w1 * e_close + w2 * barr + w3 * e_lap + w4 * e_len

        self._e_comb = jax.jit(e_comb)
        self._total = jax.jit(total)
        self._value_and_grad = jax.jit(jax.value_and_grad(total))
        self._feas = jax.jit(feas_margins)

    # packing helpers

    def pack(self, st: JointState) -> np.ndarray:
        return np.concatenate([st.V.reshape(-1), st.a, st.b, st.gamma,
                               st.theta, st.mu])

    def unpack(self, x: np.ndarray) -> JointState:
        nv, nf = self.nv, self.nf
        V = x[:3 * nv].reshape(nv, 3).copy()
        off = 3 * nv
        return JointState(V=V,
                          a=x[off:off + nf].copy(),
                          b=x[off + nf:off + 2 * nf].copy(),
                          gamma=x[off + 2 * nf:off + 3 * nf].copy(),
                          theta=x[off + 3 * nf:off + 4 * nf].copy(),
                          mu=x[off + 4 * nf:off + 5 * nf].copy())

    @property
    def n_vars(self) -> int:
        return 3 * self.nv + 5 * self.nf

    # evaluation

    def e_comb(self, x: np.ndarray) -> np.ndarray:
        """Combined geodesic + curvature error per interior edge."""
        return np.asarray(self._e_comb(jnp.asarray(x)))

    def energy(self, x: np.ndarray, nu: float, foot: np.ndarray) -> float:
        return float(self._total(jnp.asarray(x), nu, jnp.asarray(foot)))

    def value_and_grad(self, x: np.ndarray, nu: float, foot: np.ndarray):
        v, g = self._value_and_grad(jnp.asarray(x), nu, jnp.asarray(foot))
        return float(v), np.asarray(g)

    def feasibility_margins(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._feas(jnp.asarray(x)))

    def feasible(self, x: np.ndarray) -> bool:
        return bool(np.all(self.feasibility_margins(x) > 0.0))

    def rescale_gauge(self, x: np.ndarray) -> np.ndarray:
        """Normalize ||a d1 + b d2|| to 1 per face; leaves the energy
        unchanged (the field only enters through its direction)."""
        st = self.unpack(x)
        p0 = st.V[self.mesh.faces[:, 0]]
        d1 = st.V[self.mesh.faces[:, 1]] - p0
        d2 = st.V[self.mesh.faces[:, 2]] - p0
        raw = st.a[:, None] * d1 + st.b[:, None] * d2
        nr = np.maximum(np.linalg.norm(raw, axis=1), 1e-300)
        st.a /= nr
        st.b /= nr
        return self.pack(st)
