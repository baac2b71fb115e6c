"""Joint optimization of mesh shape and ruling direction field.

Runs a continuation over the Welsch parameter nu: starting from the
largest per-edge combined error and halving down to nu_min, with closest
point footpoints onto the input surface refreshed at every stage and an
L-BFGS inner solve whose line search rejects steps that violate the
per-face ruling feasibility constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .mesh import TriangleMesh
from .geometry import mesh_face_frames, estimate_principal
from .bvh import ClosestPointQuery
from .ruling_field import RulingField
from .field_init import init_ruling_field
from .energies import JointProblem, JointState, W_CLOSE, W_BARR, W_LAP, W_LEN
from . import lbfgs

NU_MIN_DEFAULT = 0.05


@dataclass
class JointOptions:
    nu_min: float = NU_MIN_DEFAULT
    inner_rel_tol: float = 1e-6
    inner_max_iter: int = 300
    memory: int = 10
    w_close: float = W_CLOSE
    w_barr: float = W_BARR
    w_lap: float = W_LAP
    w_len: float = W_LEN


@dataclass
class JointResult:
    state: JointState
    mesh: TriangleMesh
    e_comb: np.ndarray
    nus: list
    stage_energies: list
    inner_iterations: list
    feasibility_violations: int
    rejected_steps: int
    stop_reasons: list = dc_field(default_factory=list)


def nu_schedule(nu_max: float, nu_min: float) -> list:
    """Halve from nu_max down to (and including) nu_min."""
    nus = [max(nu_max, nu_min)]
    while nus[-1] > nu_min:
        nus.append(max(0.5 * nus[-1], nu_min))
    return nus


def init_theta_mu(mesh: TriangleMesh, fld: RulingField):
    """Initial principal-frame angle and curvature scale per face.

    theta is the signed angle from the ruling direction to the estimated
    maximal principal direction; mu then fits (k1, k2) in least squares
    under the asymptotic parameterization (mu sin^2, -mu cos^2)."""
    frames = mesh_face_frames(mesh)
    pr = estimate_principal(mesh)
    raw = fld.a[:, None] * frames.d1 + fld.b[:, None] * frames.d2
    r = raw / np.linalg.norm(raw, axis=1)[:, None]
    c = np.cross(frames.n, r)
    theta = np.arctan2(np.einsum("ij,ij->i", pr.e1, c),
                       np.einsum("ij,ij->i", pr.e1, r))
    s2 = np.sin(theta) ** 2
    c2 = np.cos(theta) ** 2
    mu = (pr.k1 * s2 - pr.k2 * c2) / (s2 ** 2 + c2 ** 2)
    return theta, mu


def compute_footpoints(query: ClosestPointQuery, V: np.ndarray,
                       boundary_vertex: np.ndarray) -> np.ndarray:
    """Closest points on the target for every vertex; boundary vertices
    project onto the target boundary polyline instead."""
    foot, _, _ = query.surface(V)
    if np.any(boundary_vertex) and query.has_boundary:
        bpts, _, _ = query.boundary(V[boundary_vertex])
        foot = foot.copy()
        foot[boundary_vertex] = bpts
    return foot


def optimize_joint(mesh: TriangleMesh, options: JointOptions | None = None,
                   fld: RulingField | None = None,
                   theta: np.ndarray | None = None,
                   mu: np.ndarray | None = None,
                   stage_callback=None) -> JointResult:
    """Run the full nu continuation from an initialized field.

    The target surface for closeness is the input mesh itself, frozen at
    its initial vertex positions.
    """
    opts = options or JointOptions()
    if fld is None:
        fld = init_ruling_field(mesh)
    if theta is None or mu is None:
        theta, mu = init_theta_mu(mesh, fld)
    problem = JointProblem(mesh, w_close=opts.w_close, w_barr=opts.w_barr,
                           w_lap=opts.w_lap, w_len=opts.w_len)
    st = JointState(V=mesh.vertices.copy(), a=fld.a.copy(), b=fld.b.copy(),
                    gamma=fld.gamma.copy(), theta=theta.copy(), mu=mu.copy())
    x = problem.rescale_gauge(problem.pack(st))
    if not problem.feasible(x):
        raise ValueError("initial ruling field violates the feasibility constraint")

    query = ClosestPointQuery(mesh)
    ec0 = problem.e_comb(x)
    nu_max = float(np.sqrt(max(ec0.max(), 0.0)))
    nus = nu_schedule(nu_max, opts.nu_min)

    violations = 0
    rejected = 0
    stage_energies = []
    inner_iters = []
    stop_reasons = []
    for k, nu in enumerate(nus):
        V = problem.unpack(x).V
        foot = compute_footpoints(query, V, mesh.boundary_vertex)
        res = lbfgs.minimize(
            lambda xx: problem.value_and_grad(xx, nu, foot),
            x,
            feasible=problem.feasible,
            retract=problem.rescale_gauge,
            memory=opts.memory,
            max_iter=opts.inner_max_iter,
            rel_tol=opts.inner_rel_tol,
            keep_history=True,
        )
        x = res.x
        rejected += res.n_rejected
        stage_energies.append(res.history)
        inner_iters.append(res.n_iter)
        stop_reasons.append(res.stop_reason)
        if not problem.feasible(x):
            violations += 1
        if stage_callback is not None:
            stage_callback(k, nu, res)

    st = problem.unpack(x)
    out_mesh = mesh.with_vertices(st.V)
    return JointResult(state=st, mesh=out_mesh, e_comb=problem.e_comb(x),
                       nus=nus, stage_energies=stage_energies,
                       inner_iterations=inner_iters,
                       feasibility_violations=violations,
                       rejected_steps=rejected, stop_reasons=stop_reasons)
