"""Manufactured cases, discretization error norms and stability diagnostics.

The two benchmark cases carry closed-form derivatives, hard-coded after
symbolic derivation; the test suite re-derives them independently.  Error
norms follow the table convention of comparing against interpolants
(vertex interpolant for displacement, cell means for pressure), so a
discrete solution equal to the interpolant scores exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import (
    MaterialParams,
    _bubble_gradients,
    assemble_biot_blocks,
    assemble_coupling,
    assemble_diagonal_bubble,
    assemble_elasticity,
    assemble_stokes,
    bubble_stiffness_cell,
    build_biot_system,
    condense_bubbles,
    condense_stokes,
    recover_bubbles,
)
from .fespace import (
    DofLayout,
    build_dof_layout,
    interpolate_p0,
    interpolate_p1,
    quadrature,
)
from .mesh import Mesh, build_structured_unit_square
from .solver import DirectFactor, SolverError, eig_extreme, infsup_estimate
from .timestep import initial_memory, initial_state, step

BIOT_SCHEMES = ("P1", "A", "AD")
STOKES_SCHEMES = ("AS", "ASD")


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields with closed-form derivatives plus the matching sources.

    The derived loads live inside ``params`` so assembly consumes them
    directly.  ``lap_u`` is the componentwise Laplacian; both cases are
    divergence free, which the residual check exploits.
    """

    name: str
    params: MaterialParams
    u: Callable
    grad_u: Callable
    lap_u: Callable
    p: Callable
    grad_p: Callable
    w: Callable
    div_w: Callable
    div_u: Callable = staticmethod(lambda x: np.zeros(len(x)))
    is_stokes: bool = False


def _poly(t):
    # b(t) = t - t^2 vanishes at 0 and 1; P = b^2 has a double root there
    b = t - t * t
    return b * b


def _poly_d1(t):
    return 2.0 * (t - t * t) * (1.0 - 2.0 * t)


def _poly_d2(t):
    return 2.0 * (1.0 - 2.0 * t) ** 2 - 4.0 * (t - t * t)


def _poly_d3(t):
    return -12.0 * (1.0 - 2.0 * t)


def biot_benchmark_case(k: float, *, lam: float = 2.0, mu: float = 1.0,
                        alpha: float = 1.0, M: float = 1e6,
                        mu_f: float = 1.0) -> ManufacturedCase:
    """Stationary consolidation benchmark: u = curl (xy(1-x)(1-y))^2, p = 1.

    The stream function makes u divergence free with u = 0 and grad u = 0
    on the boundary; constant pressure gives w = 0.  The only nonzero
    source is the elastic body load -mu lap(u), so every material constant
    can be overridden without breaking the manufactured balance.
    """
    if k <= 0:
        raise ValueError("permeability must be positive")

    def u(x):
        return np.column_stack([_poly(x[:, 0]) * _poly_d1(x[:, 1]),
                                -_poly_d1(x[:, 0]) * _poly(x[:, 1])])

    def grad_u(x):
        X, Y = x[:, 0], x[:, 1]
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = _poly_d1(X) * _poly_d1(Y)
        g[:, 0, 1] = _poly(X) * _poly_d2(Y)
        g[:, 1, 0] = -_poly_d2(X) * _poly(Y)
        g[:, 1, 1] = -_poly_d1(X) * _poly_d1(Y)
        return g

    def lap_u(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([
            _poly_d2(X) * _poly_d1(Y) + _poly(X) * _poly_d3(Y),
            -_poly_d3(X) * _poly(Y) - _poly_d1(X) * _poly_d2(Y)])

    params = MaterialParams(
        lam=lam, mu=mu, alpha=alpha, M=M, K=k, mu_f=mu_f,
        rho_g=lambda x: -mu * lap_u(x),
        p_D=lambda x: np.ones(len(x)))
    return ManufacturedCase(
        name="biot-benchmark", params=params,
        u=u, grad_u=grad_u, lap_u=lap_u,
        p=lambda x: np.ones(len(x)),
        grad_p=lambda x: np.zeros_like(x),
        w=lambda x: np.zeros_like(x),
        div_w=lambda x: np.zeros(len(x)))


def stokes_benchmark_case(nu: float = 1.0) -> ManufacturedCase:
    """Driven Stokes benchmark: a divergence-free sine vortex, p = 0.5 - x."""
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    pi = np.pi

    def u(x):
        return np.column_stack([np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1]),
                                -np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1])])

    def grad_u(x):
        X, Y = pi * x[:, 0], pi * x[:, 1]
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = pi * np.cos(X) * np.cos(Y)
        g[:, 0, 1] = -pi * np.sin(X) * np.sin(Y)
        g[:, 1, 0] = pi * np.sin(X) * np.sin(Y)
        g[:, 1, 1] = -pi * np.cos(X) * np.cos(Y)
        return g

    def lap_u(x):
        return -2.0 * pi * pi * u(x)

    def force(x):
        f = 2.0 * nu * pi * pi * u(x)
        f[:, 0] -= 1.0
        return f

    params = MaterialParams(nu=nu, rho_g=force, u_D=u)
    return ManufacturedCase(
        name="stokes-benchmark", params=params,
        u=u, grad_u=grad_u, lap_u=lap_u,
        p=lambda x: 0.5 - x[:, 0],
        grad_p=lambda x: np.column_stack([-np.ones(len(x)), np.zeros(len(x))]),
        w=lambda x: np.zeros_like(x),
        div_w=lambda x: np.zeros(len(x)),
        is_stokes=True)


def strong_residual(case: ManufacturedCase, points: np.ndarray) -> dict:
    """Max-abs residual of the governing equations at the given points.

    Both benchmark fields are divergence free, so the grad(div u) part of
    the momentum operator drops out exactly.
    """
    p = case.params
    out = {}
    if case.is_stokes:
        mom = -p.nu * case.lap_u(points) + case.grad_p(points) \
            - p.rho_g(points)
        out["momentum"] = np.abs(mom).max()
        div_u = np.einsum("qcc->q", case.grad_u(points))
        out["mass"] = np.abs(div_u).max()
        return out
    mom = -p.mu * case.lap_u(points) + p.alpha * case.grad_p(points) \
        - p.rho_g(points)
    out["momentum"] = np.abs(mom).max()
    Kinv = p.permeability_inverse(points.shape[1]) * p.mu_f
    darcy = case.w(points) @ Kinv.T + case.grad_p(points)
    if p.rho_f_g is not None:
        darcy -= p.rho_f_g(points)
    out["darcy"] = np.abs(darcy).max()
    mass = case.div_w(points)
    if p.source_f is not None:
        mass = mass - p.source_f(points)
    out["mass"] = np.abs(mass).max()
    return out


def energy_norm_error(u_exact: Callable, U_l: np.ndarray, mesh: Mesh,
                      layout: DofLayout, blocks: dict, form: str = "a",
                      U_b: Optional[np.ndarray] = None) -> float:
    """Energy norm of (Pi_1 u - u_h) in the requested bilinear form.

    Table mode (U_b omitted) measures the linear parts only, which is what
    the error tables print.  With U_b the bubble part of the difference is
    -U_b, weighted by the full bubble block for forms "a"/"aS" and by its
    scaled diagonal for "aD"/"aSD".
    """
    if form not in ("a", "aD", "aS", "aSD"):
        raise ValueError(f"unknown energy form {form!r}")
    e_l = interpolate_p1(u_exact, mesh, layout)[layout.u_free] - U_l
    total = e_l @ (blocks["A_ll"] @ e_l)
    if U_b is not None and layout.n_b:
        e_b = -np.asarray(U_b, dtype=float)
        total += 2.0 * e_b @ (blocks["A_bl"] @ e_l)
        if form in ("aD", "aSD"):
            total += e_b @ (blocks["D_bb"] * e_b)
        else:
            total += e_b @ (blocks["A_bb"] @ e_b)
    return float(np.sqrt(max(total, 0.0)))


def velocity_energy_error(grad_u_exact: Callable, U_l: np.ndarray,
                          U_b: Optional[np.ndarray], mesh: Mesh,
                          layout: DofLayout, nu: float,
                          boundary_values: Optional[Callable] = None,
                          degree: int = 6) -> float:
    """True energy distance sqrt(2 nu |eps(u - u_h)|^2) by quadrature.

    Unlike the interpolant-based table norm this decays first order.  The
    discrete field includes the bubble part when U_b is given; constrained
    vertices take their lifted values from boundary_values (zero without).
    """
    full = np.zeros(layout.n_l)
    if boundary_values is not None:
        full = np.asarray(boundary_values(mesh.vertices), dtype=float).ravel()
    full[layout.u_free] = U_l
    coeff = full.reshape(mesh.n_vertices, mesh.d)
    rule = quadrature(degree, mesh.d)
    w, lam_q = rule.weights, rule.points
    total = 0.0
    for t in range(mesh.n_cells):
        g = mesh.grad_lambda[t]
        V = mesh.cell_volumes[t]
        xq = lam_q @ mesh.vertices[mesh.cells[t]]
        grad_h = np.einsum("kc,kd->cd", coeff[mesh.cells[t]], g)
        diff = grad_u_exact(xq) - grad_h[None, :, :]
        if U_b is not None and layout.n_b:
            faces = mesh.cell_faces[t]
            bub = layout.face_to_bubble[faces]
            keep = bub >= 0
            if keep.any():
                gp = _bubble_gradients(lam_q, g)[:, keep, :]
                n = mesh.face_normals[faces[keep]]
                diff = diff - np.einsum("a,ac,qad->qcd",
                                        U_b[bub[keep]], n, gp)
        eps = 0.5 * (diff + np.swapaxes(diff, 1, 2))
        total += 2.0 * nu * V * (w @ np.einsum("qcd,qcd->q", eps, eps))
    return float(np.sqrt(total))


def l2_pressure_error(p_exact: Callable, P: np.ndarray, mesh: Mesh) -> float:
    """L2 distance between the cell means of p_exact and the P0 solution."""
    diff = interpolate_p0(p_exact, mesh) - P
    return float(np.sqrt(np.sum(mesh.cell_volumes * diff * diff)))


def flux_error(w_exact: Callable, W: np.ndarray, mesh: Mesh, layout: DofLayout,
               div_w_exact: Optional[Callable] = None, degree: int = 5):
    """L2 and H(div)-seminorm errors of the lowest-order face expansion.

    W is the reduced coefficient vector; clamped faces carry zero flux.
    Returns (l2, hdiv_semi); the seminorm needs div_w_exact (defaults to a
    divergence-free exact field).
    """
    W_full = np.zeros(mesh.n_faces)
    W_full[layout.w_free] = W
    rule = quadrature(degree, mesh.d)
    wq = rule.weights
    l2 = 0.0
    hdiv = 0.0
    for t in range(mesh.n_cells):
        V = mesh.cell_volumes[t]
        coords = mesh.vertices[mesh.cells[t]]
        faces = mesh.cell_faces[t]
        signs = mesh.cell_face_signs[t]
        areas = mesh.face_areas[faces]
        xq = rule.points @ coords
        scale = signs * areas / (mesh.d * V)
        psi = scale[None, :, None] * (xq[:, None, :] - coords[None, :, :])
        wh = np.einsum("a,qad->qd", W_full[faces], psi)
        diff = w_exact(xq) - wh
        l2 += V * (wq @ np.einsum("qd,qd->q", diff, diff))
        div_h = float(np.sum(W_full[faces] * signs * areas) / V)
        div_exact = div_w_exact(xq) if div_w_exact is not None \
            else np.zeros(len(xq))
        ddiff = div_exact - div_h
        hdiv += V * (wq @ (ddiff * ddiff))
    return float(np.sqrt(l2)), float(np.sqrt(hdiv))


@dataclass
class ExperimentResult:
    """Rows of one convergence sweep, CSV-schema keyed."""

    experiment: str
    scheme: str
    rows: list = field(default_factory=list)

    def column(self, key):
        return [row.get(key) for row in self.rows]


def _observed_rate(err_prev, err_cur, h_prev, h_cur):
    if err_prev is None or err_prev <= 0 or err_cur <= 0:
        return None
    return float(np.log(err_prev / err_cur) / np.log(h_prev / h_cur))


def _solve_stokes(mesh, layout, case, scheme):
    variant = "enriched" if scheme == "AS" else "diagonal"
    system = assemble_stokes(mesh, case.params, layout, variant)
    if scheme == "ASD":
        system = condense_stokes(system)
    x = DirectFactor(system.matrix).solve(system.rhs_static)
    U_l, P = x[system.slices["l"]], x[system.slices["p"]]
    if scheme == "ASD":
        U_b = recover_bubbles(system, U_l, P)
    else:
        U_b = x[system.slices["b"]] if layout.n_b else np.zeros(0)
    return U_l, U_b, P, system.blocks


def _solve_biot(mesh, layout, case, scheme, tau, n_steps, init_mode):
    blocks = assemble_biot_blocks(mesh, case.params, layout)
    if scheme == "AD":
        system = condense_bubbles(build_biot_system(blocks, "diagonal", tau))
    else:
        system = build_biot_system(blocks, "enriched", tau)
    state = initial_state(mesh, case.params, layout, init_mode,
                          u_exact=case.u, p_exact=case.p, w_exact=case.w)
    # first step integrates the prescribed initial data, not the interpolant
    mem0 = None
    if init_mode == "interpolate-exact":
        mem0 = initial_memory(mesh, case.params, layout, case.p, case.div_u)
    for m in range(n_steps):
        state = step(state, system, memory=mem0 if m == 0 else None)
    return blocks, state


def convergence_study(case: ManufacturedCase, scheme: str, N_values,
                      diagonal: str = "right-down", tau: float = 1.0,
                      n_steps: int = 1, init_mode: str = "interpolate-exact",
                      experiment: Optional[str] = None) -> ExperimentResult:
    """Sweep uniform meshes, solve, and tabulate errors with observed rates.

    A solver failure marks the level's row and aborts the remaining levels
    (partial results stay usable).
    """
    if scheme not in BIOT_SCHEMES + STOKES_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if case.is_stokes != (scheme in STOKES_SCHEMES):
        raise ValueError(f"scheme {scheme} does not fit case {case.name}")
    kappa = None
    if not case.is_stokes:
        kappa = float(np.asarray(case.params.K, dtype=float).max()
                      / case.params.mu_f)
    result = ExperimentResult(experiment or case.name, scheme)
    prev = {"h": None, "u": None, "p": None}
    for N in N_values:
        mesh = build_structured_unit_square(N, diagonal)
        layout = build_dof_layout(mesh, enrich=(scheme != "P1"))
        h = mesh.h_max
        row = {"experiment": result.experiment, "scheme": scheme,
               "kappa": kappa, "N": N, "h": h, "status": "ok",
               "err_u_energy": None, "err_p_l2": None, "err_w_l2": None,
               "rate_u": None, "rate_p": None, "gamma_h": None, "eta": None}
        try:
            if case.is_stokes:
                U_l, U_b, P, blocks = _solve_stokes(mesh, layout, case, scheme)
                W = None
            else:
                blocks, state = _solve_biot(mesh, layout, case, scheme, tau,
                                            n_steps, init_mode)
                U_l, P, W = state.U_l, state.P, state.W
                form = "aD" if scheme == "AD" else "a"
        except SolverError as exc:
            row["status"] = f"failed: {exc}"
            result.rows.append(row)
            break
        if case.is_stokes:
            # table norms compare against the interpolant (superclose, order
            # ~1.5 here); report the plain first-order energy distance instead
            row["err_u_energy"] = velocity_energy_error(
                case.grad_u, U_l, U_b, mesh, layout, case.params.nu,
                boundary_values=case.u)
        else:
            row["err_u_energy"] = energy_norm_error(case.u, U_l, mesh, layout,
                                                    blocks, form)
        row["err_p_l2"] = l2_pressure_error(case.p, P, mesh)
        if W is not None:
            row["err_w_l2"], _ = flux_error(case.w, W, mesh, layout,
                                            case.div_w)
        row["rate_u"] = _observed_rate(prev["u"], row["err_u_energy"],
                                       prev["h"], h)
        row["rate_p"] = _observed_rate(prev["p"], row["err_p_l2"],
                                       prev["h"], h)
        prev = {"h": h, "u": row["err_u_energy"], "p": row["err_p_l2"]}
        result.rows.append(row)
    return result


@dataclass(frozen=True)
class SpectralReport:
    """Cellwise and global spectral equivalence diagnostics."""

    theta_min: np.ndarray
    theta_max: np.ndarray
    eta: float
    global_min: float
    converged: bool


def spectral_equivalence_report(mesh: Mesh, params: MaterialParams) -> SpectralReport:
    """Eigenvalue bounds of the diagonal bubble perturbation.

    Per cell: generalized eigenvalues of the local bubble stiffness against
    its own diagonal (bounded by d+1).  Globally: extreme eigenvalues of
    the perturbed displacement block against the original one (at least 1,
    at most the shape-regularity constant recorded as eta).
    """
    mins = np.empty(mesh.n_cells)
    maxs = np.empty(mesh.n_cells)
    for t in range(mesh.n_cells):
        local = bubble_stiffness_cell(mesh, params, t)
        vals = scipy.linalg.eigh(local, np.diag(np.diag(local)),
                                 eigvals_only=True)
        mins[t], maxs[t] = vals[0], vals[-1]

    layout = build_dof_layout(mesh)
    if layout.n_b == 0:
        return SpectralReport(mins, maxs, 1.0, 1.0, True)
    A_bb, A_bl, A_ll = assemble_elasticity(mesh, params, layout)
    D_bb = assemble_diagonal_bubble(mesh, params, layout)
    A = sp.bmat([[A_bb, A_bl], [A_bl.T, A_ll]], format="csr")
    AD = sp.bmat([[sp.diags(D_bb), A_bl], [A_bl.T, A_ll]], format="csr")
    eta, ok_max = eig_extreme(AD, A, "max")
    lo, ok_min = eig_extreme(AD, A, "min")
    return SpectralReport(mins, maxs, eta, lo, ok_max and ok_min)


def divergence_rank_report(mesh: Mesh) -> dict:
    """Rank of the discrete divergence with and without face bubbles.

    The plain linear space on a fully clamped mesh has a divergence with
    trivial kernel but a range strictly inside the pressure space (the
    locking mechanism); adding bubbles fills the range up to the constant.
    """
    params = MaterialParams()
    enriched = build_dof_layout(mesh)
    plain = build_dof_layout(mesh, enrich=False)
    G_b, G_l, _ = assemble_coupling(mesh, params, enriched)
    B_l = G_l.T.toarray()
    B_full = np.hstack([G_b.T.toarray(), B_l])
    rank_l = int(np.linalg.matrix_rank(B_l))
    rank_full = int(np.linalg.matrix_rank(B_full))
    return {
        "n_linear": int(plain.u_free.sum()),
        "n_pressure": enriched.n_p,
        "rank_linear": rank_l,
        "rank_enriched": rank_full,
    }


def stokes_pair_infsup(mesh: Mesh, nu: float = 1.0, enrich: bool = True):
    """Inf-sup estimate of the (velocity, pressure) pair on this mesh."""
    layout = build_dof_layout(mesh, enrich=enrich)
    params = MaterialParams(mu=nu, lam=0.0, alpha=1.0)
    A_bb, A_bl, A_ll = assemble_elasticity(mesh, params, layout)
    G_b, G_l, _ = assemble_coupling(mesh, params, layout)
    if layout.n_b:
        A = sp.bmat([[A_bb, A_bl], [A_bl.T, A_ll]], format="csr")
        B = sp.bmat([[G_b.T, G_l.T]], format="csr")
    else:
        A = A_ll
        B = G_l.T.tocsr()
    M_press = sp.diags(mesh.cell_volumes).tocsr()
    return infsup_estimate(B, A, M_press)
