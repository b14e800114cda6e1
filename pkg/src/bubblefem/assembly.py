"""Block assembly for the three-field consolidation system and stabilized Stokes.

Element integrals run cell by cell with small dense tensors and are
compressed to CSR at the end.  Essential conditions (u = 0 and w.n = 0 on
clamped faces) are imposed by symmetric elimination: full-size blocks are
assembled, then constrained rows and columns are dropped.  The monolithic
row order is (bubble, linear, flux, pressure) with the pressure equation
negated so the matrix stays symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .fespace import DofLayout, quadrature
from .mesh import FACE_CLAMPED, FACE_TRACTION, Mesh


@dataclass(frozen=True)
class MaterialParams:
    """Coefficients and data of the coupled problem.

    K is either a scalar permeability or a full SPD d x d array.  The load
    callables are vectorized ((m, d) points in, (m, d) or (m,) values out);
    None means zero.  rho_g is the momentum body load (doubling as the
    Stokes force), rho_f_g the fluid load, source_f the storage source,
    p_D the boundary pressure on traction faces and u_D a prescribed
    boundary velocity lifted into clamped dofs (zero when None).
    """

    lam: float = 1.0
    mu: float = 1.0
    alpha: float = 1.0
    M: float = 1.0
    K: object = 1.0
    mu_f: float = 1.0
    nu: float = 1.0
    rho_g: Optional[Callable] = None
    rho_f_g: Optional[Callable] = None
    source_f: Optional[Callable] = None
    p_D: Optional[Callable] = None
    u_D: Optional[Callable] = None

    def __post_init__(self):
        if self.mu <= 0 or self.nu <= 0 or self.mu_f <= 0 or self.M <= 0:
            raise ValueError("mu, nu, mu_f and M must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        K = np.asarray(self.K, dtype=float)
        if K.ndim == 0:
            if K <= 0:
                raise ValueError("scalar permeability must be positive")
        elif (K.ndim != 2 or K.shape[0] != K.shape[1]
              or not np.allclose(K, K.T) or np.linalg.eigvalsh(K).min() <= 0):
            raise ValueError("permeability tensor must be SPD")

    def permeability_inverse(self, d: int) -> np.ndarray:
        K = np.asarray(self.K, dtype=float)
        if K.ndim == 0:
            return np.eye(d) / float(K)
        return np.linalg.inv(K)


@dataclass
class BlockSystem:
    """Named blocks plus the assembled monolithic matrix and static RHS.

    ``rhs_static`` holds the source and boundary terms; the memory terms of
    the time discretization are added per step.  ``slices`` addresses the
    reduced unknown families inside the monolithic vector.  Condensed
    variants carry the data needed to recover bubble coefficients.
    """

    variant: str
    tau: float
    layout: DofLayout
    blocks: dict
    matrix: sp.csr_matrix
    rhs_static: np.ndarray
    slices: dict
    recovery: Optional[dict] = None
    factor: object = field(default=None, repr=False)


def _stiff_rule(mesh: Mesh, degree=None):
    return quadrature(2 * mesh.d if degree is None else degree, mesh.d)


def _bubble_gradients(lam: np.ndarray, grads: np.ndarray) -> np.ndarray:
    # lam (nq, d+1), grads (d+1, d) -> gradient of each face bubble, (nq, d+1, d)
    nq, dp1 = lam.shape
    gp = np.zeros((nq, dp1, grads.shape[1]))
    for k in range(dp1):
        others = [m for m in range(dp1) if m != k]
        for m in others:
            coef = np.ones(nq)
            for j in others:
                if j != m:
                    coef = coef * lam[:, j]
            gp[:, k, :] += coef[:, None] * grads[m]
    return gp


def _bubble_values(lam: np.ndarray) -> np.ndarray:
    nq, dp1 = lam.shape
    vals = np.empty((nq, dp1))
    for k in range(dp1):
        vals[:, k] = np.prod(np.delete(lam, k, axis=1), axis=1)
    return vals


def _to_csr(i, j, v, shape):
    # sum duplicates ourselves with a stable sort so entry (i, j) and its
    # transpose partner accumulate cell contributions in the same order;
    # symmetric local matrices then give a bitwise-symmetric global matrix
    if len(v) == 0:
        return sp.csr_matrix(shape)
    i = np.concatenate(i)
    j = np.concatenate(j)
    v = np.concatenate(v)
    order = np.lexsort((j, i))
    i, j, v = i[order], j[order], v[order]
    first = np.empty(i.size, dtype=bool)
    first[0] = True
    np.not_equal(i[1:], i[:-1], out=first[1:])
    first[1:] |= j[1:] != j[:-1]
    starts = np.flatnonzero(first)
    return sp.csr_matrix(
        (np.add.reduceat(v, starts), (i[starts], j[starts])), shape=shape)


def _p1_dofs(mesh: Mesh, t: int) -> np.ndarray:
    d = mesh.d
    return (d * mesh.cells[t][:, None] + np.arange(d)).ravel()


def assemble_elasticity(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                        quad_degree=None, reduced: bool = True):
    """Stiffness of 2 mu (eps(u), eps(v)) + lam (div u, div v) on the enriched space.

    Returns (A_bb, A_bl, A_ll) as CSR in the reduced numbering: bubble rows
    over interior/traction faces, linear dofs restricted to the free set.
    reduced=False keeps every linear dof (for boundary lifts).
    """
    d = mesh.d
    nd = (d + 1) * d
    rule = _stiff_rule(mesh, quad_degree)
    w, lam_q = rule.weights, rule.points
    mu, lame = params.mu, params.lam
    eye = np.eye(d)

    bb = ([], [], [])
    bl = ([], [], [])
    ll = ([], [], [])
    for t in range(mesh.n_cells):
        g = mesh.grad_lambda[t]
        V = mesh.cell_volumes[t]
        faces = mesh.cell_faces[t]
        n = mesh.face_normals[faces]

        GG = g @ g.T
        t2 = np.einsum("kb,lc->kclb", g, g).reshape(nd, nd)
        t3 = np.einsum("kc,lb->kclb", g, g).reshape(nd, nd)
        A_ll_loc = V * (mu * (np.kron(GG, eye) + t2) + lame * t3)
        # force bitwise symmetry (einsum may order reductions per entry)
        A_ll_loc = 0.5 * (A_ll_loc + A_ll_loc.T)

        gp = _bubble_gradients(lam_q, g)
        NN = n @ n.T
        C1 = np.einsum("q,qad,qbd->ab", w, gp, gp)
        P = np.einsum("ad,qbd->qab", n, gp)
        C2 = np.einsum("q,qab,qba->ab", w, P, P)
        divphi = np.einsum("qaa->qa", P)
        C3 = np.einsum("q,qa,qb->ab", w, divphi, divphi)
        A_bb_loc = V * (mu * (NN * C1 + C2) + lame * C3)
        A_bb_loc = 0.5 * (A_bb_loc + A_bb_loc.T)

        E1 = V * np.einsum("q,qad,kd->ak", w, gp, g)
        E2 = V * np.einsum("q,qac->ac", w, gp)
        NG = n @ g.T
        divbar = V * (w @ divphi)
        A_bl_loc = (mu * (np.einsum("ac,ak->akc", n, E1)
                          + np.einsum("ak,ac->akc", NG, E2))
                    + lame * np.einsum("a,kc->akc", divbar, g)).reshape(d + 1, nd)

        ldofs = _p1_dofs(mesh, t)
        ll[0].append(np.repeat(ldofs, nd))
        ll[1].append(np.tile(ldofs, nd))
        ll[2].append(A_ll_loc.ravel())

        bub = layout.face_to_bubble[faces]
        keep = bub >= 0
        if keep.any():
            rows = bub[keep]
            m = rows.size
            bb[0].append(np.repeat(rows, m))
            bb[1].append(np.tile(rows, m))
            bb[2].append(A_bb_loc[np.ix_(keep, keep)].ravel())
            bl[0].append(np.repeat(rows, nd))
            bl[1].append(np.tile(ldofs, m))
            bl[2].append(A_bl_loc[keep].ravel())

    A_bb = _to_csr(*bb, shape=(layout.n_b, layout.n_b))
    A_bl_full = _to_csr(*bl, shape=(layout.n_b, layout.n_l))
    A_ll_full = _to_csr(*ll, shape=(layout.n_l, layout.n_l))
    if not reduced:
        return A_bb, A_bl_full, A_ll_full
    free = np.flatnonzero(layout.u_free)
    return A_bb, A_bl_full[:, free].tocsr(), A_ll_full[free][:, free].tocsr()


def bubble_stiffness_cell(mesh: Mesh, params: MaterialParams, t: int,
                          quad_degree=None) -> np.ndarray:
    """Local face-bubble stiffness of cell t over all its d+1 faces."""
    rule = _stiff_rule(mesh, quad_degree)
    w, lam_q = rule.weights, rule.points
    g = mesh.grad_lambda[t]
    V = mesh.cell_volumes[t]
    n = mesh.face_normals[mesh.cell_faces[t]]
    gp = _bubble_gradients(lam_q, g)
    NN = n @ n.T
    C1 = np.einsum("q,qad,qbd->ab", w, gp, gp)
    P = np.einsum("ad,qbd->qab", n, gp)
    C2 = np.einsum("q,qab,qba->ab", w, P, P)
    divphi = np.einsum("qaa->qa", P)
    C3 = np.einsum("q,qa,qb->ab", w, divphi, divphi)
    local = V * (params.mu * (NN * C1 + C2) + params.lam * C3)
    return 0.5 * (local + local.T)


def assemble_diagonal_bubble(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                             quad_degree=None) -> np.ndarray:
    """Diagonal bubble form: entry e is (d+1) * sum_T a_T(Phi_e, Phi_e).

    Returned as a plain vector of the strictly positive diagonal.
    """
    d = mesh.d
    diag = np.zeros(layout.n_b)
    for t in range(mesh.n_cells):
        local = bubble_stiffness_cell(mesh, params, t, quad_degree)
        bub = layout.face_to_bubble[mesh.cell_faces[t]]
        for a in range(d + 1):
            if bub[a] >= 0:
                diag[bub[a]] += local[a, a]
    # scale once at the end so the result equals (d+1) times the assembled
    # bubble diagonal bit for bit (each face collects at most two cells)
    return (d + 1) * diag


def assemble_darcy(mesh: Mesh, params: MaterialParams, layout: DofLayout):
    """Flux mass with mu_f K^{-1} and the flux-pressure coupling.

    Returns (M_w, G) in the reduced numbering (clamped faces eliminated).
    G[f, T] = -(1, div psi_f)_T, so G^T realizes -(div w, q).
    """
    d = mesh.d
    rule = _stiff_rule(mesh)
    w = rule.weights
    Kinv = params.permeability_inverse(d) * params.mu_f
    mw = ([], [], [])
    gi, gj, gv = [], [], []
    for t in range(mesh.n_cells):
        V = mesh.cell_volumes[t]
        coords = mesh.vertices[mesh.cells[t]]
        faces = mesh.cell_faces[t]
        signs = mesh.cell_face_signs[t]
        areas = mesh.face_areas[faces]
        xq = rule.points @ coords
        scale = signs * areas / (d * V)
        psi = scale[None, :, None] * (xq[:, None, :] - coords[None, :, :])
        M_loc = V * np.einsum("q,qad,de,qbe->ab", w, psi, Kinv, psi)
        M_loc = 0.5 * (M_loc + M_loc.T)
        mw[0].append(np.repeat(faces, d + 1))
        mw[1].append(np.tile(faces, d + 1))
        mw[2].append(M_loc.ravel())
        gi.append(faces)
        gj.append(np.full(d + 1, t))
        gv.append(-signs * areas)

    nf = mesh.n_faces
    M_w_full = _to_csr(*mw, shape=(nf, nf))
    G_full = _to_csr(gi, gj, gv, shape=(nf, mesh.n_cells))
    free = np.flatnonzero(layout.w_free)
    return M_w_full[free][:, free].tocsr(), G_full[free].tocsr()


def assemble_coupling(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                      quad_degree=None, reduced: bool = True):
    """Pressure couplings -(alpha p, div v) for both displacement families
    plus the scaled pressure mass.

    Returns (G_b, G_l, M_p) with M_p = (1/M) diag(|T|) as CSR; reduced=False
    keeps the constrained linear rows of G_l.
    """
    d = mesh.d
    rule = _stiff_rule(mesh, quad_degree)
    w, lam_q = rule.weights, rule.points
    alpha = params.alpha
    gb = ([], [], [])
    gl = ([], [], [])
    for t in range(mesh.n_cells):
        g = mesh.grad_lambda[t]
        V = mesh.cell_volumes[t]
        faces = mesh.cell_faces[t]
        n = mesh.face_normals[faces]
        gp = _bubble_gradients(lam_q, g)
        divphi = np.einsum("ad,qad->qa", n, gp)
        divbar = V * (w @ divphi)
        bub = layout.face_to_bubble[faces]
        keep = bub >= 0
        if keep.any():
            gb[0].append(bub[keep])
            gb[1].append(np.full(int(keep.sum()), t))
            gb[2].append(-alpha * divbar[keep])
        ldofs = _p1_dofs(mesh, t)
        gl[0].append(ldofs)
        gl[1].append(np.full(ldofs.size, t))
        gl[2].append(-alpha * V * g.ravel())

    G_b = _to_csr(*gb, shape=(layout.n_b, layout.n_p))
    G_l_full = _to_csr(*gl, shape=(layout.n_l, layout.n_p))
    M_p = sp.diags(mesh.cell_volumes / params.M).tocsr()
    if not reduced:
        return G_b, G_l_full, M_p
    free = np.flatnonzero(layout.u_free)
    return G_b, G_l_full[free].tocsr(), M_p


def assemble_body_loads(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                        degree=None):
    """Source vectors: (rho_g, v) for both displacement families, the raw
    Darcy right side (rho_f g, r) - boundary pressure term, and per-cell
    storage sources.

    The Darcy part is returned unscaled; the time step multiplies it.
    """
    d = mesh.d
    rule = quadrature(2 * mesh.d + 2 if degree is None else degree, mesh.d)
    w, lam_q = rule.weights, rule.points
    b_b = np.zeros(layout.n_b)
    b_l = np.zeros(layout.n_l)
    b_w = np.zeros(mesh.n_faces)
    f_cells = np.zeros(mesh.n_cells)
    phi = _bubble_values(lam_q)

    for t in range(mesh.n_cells):
        V = mesh.cell_volumes[t]
        coords = mesh.vertices[mesh.cells[t]]
        faces = mesh.cell_faces[t]
        xq = rule.points @ coords
        if params.rho_g is not None:
            rg = np.asarray(params.rho_g(xq), dtype=float)
            b_l[_p1_dofs(mesh, t)] += V * np.einsum("q,qc,qk->kc", w, rg, lam_q).ravel()
            n = mesh.face_normals[faces]
            bub = layout.face_to_bubble[faces]
            keep = bub >= 0
            if keep.any():
                loads = V * np.einsum("q,qc,ac,qa->a", w, rg, n, phi)
                b_b[bub[keep]] += loads[keep]
        if params.rho_f_g is not None:
            rfg = np.asarray(params.rho_f_g(xq), dtype=float)
            signs = mesh.cell_face_signs[t]
            areas = mesh.face_areas[faces]
            scale = signs * areas / (d * V)
            psi = scale[None, :, None] * (xq[:, None, :] - coords[None, :, :])
            b_w[faces] += V * np.einsum("q,qc,qac->a", w, rfg, psi)
        if params.source_f is not None:
            f_cells[t] = V * (w @ np.asarray(params.source_f(xq), dtype=float))

    if params.p_D is not None:
        face_rule = quadrature(4, mesh.d - 1)
        for f in np.flatnonzero(mesh.face_tags == FACE_TRACTION):
            xq = face_rule.points @ mesh.vertices[mesh.faces[f]]
            mean = face_rule.weights @ np.asarray(params.p_D(xq), dtype=float)
            b_w[f] -= mesh.face_areas[f] * mean

    return (b_b, b_l[layout.u_free], b_w[layout.w_free], f_cells)


def assemble_biot_blocks(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                         rhs_degree=None) -> dict:
    """Assemble every block and source vector the consolidation system needs."""
    A_bb, A_bl, A_ll = assemble_elasticity(mesh, params, layout)
    D_bb = assemble_diagonal_bubble(mesh, params, layout)
    M_w, G = assemble_darcy(mesh, params, layout)
    G_b, G_l, M_p = assemble_coupling(mesh, params, layout)
    b_b, b_l, b_w_src, f_cells = assemble_body_loads(mesh, params, layout, rhs_degree)
    return {
        "layout": layout, "A_bb": A_bb, "D_bb": D_bb, "A_bl": A_bl, "A_ll": A_ll,
        "M_w": M_w, "G": G, "G_b": G_b, "G_l": G_l, "M_p": M_p,
        "b_b": b_b, "b_l": b_l, "b_w_src": b_w_src, "f_cells": f_cells,
    }


def build_biot_system(blocks: dict, variant: str, tau: float) -> BlockSystem:
    """Monolithic symmetric system in the row order (bubble, linear, flux, pressure).

    variant "enriched" keeps the full bubble block, "diagonal" replaces it
    by its scaled diagonal.  The pressure row is negated, so the assembled
    matrix is symmetric indefinite.  An empty bubble set degrades to the
    plain three-block scheme.
    """
    if variant not in ("enriched", "diagonal"):
        raise ValueError(f"unknown variant {variant!r}")
    layout = blocks["layout"]
    n_b = layout.n_b
    A_bl, A_ll = blocks["A_bl"], blocks["A_ll"]
    M_w, G = blocks["M_w"], blocks["G"]
    G_b, G_l, M_p = blocks["G_b"], blocks["G_l"], blocks["M_p"]

    if n_b == 0:
        rows = [
            [A_ll, None, G_l],
            [None, tau * M_w, tau * G],
            [G_l.T, tau * G.T, -M_p],
        ]
    else:
        top = sp.diags(blocks["D_bb"]).tocsr() if variant == "diagonal" \
            else blocks["A_bb"]
        rows = [
            [top, A_bl, None, G_b],
            [A_bl.T, A_ll, None, G_l],
            [None, None, tau * M_w, tau * G],
            [G_b.T, G_l.T, tau * G.T, -M_p],
        ]
    matrix = sp.bmat(rows, format="csr")

    n_lf = A_ll.shape[0]
    n_w = M_w.shape[0]
    n_p = M_p.shape[0]
    offsets = np.cumsum([0, n_b, n_lf, n_w, n_p])
    slices = {
        "b": slice(offsets[0], offsets[1]),
        "l": slice(offsets[1], offsets[2]),
        "w": slice(offsets[2], offsets[3]),
        "p": slice(offsets[3], offsets[4]),
    }
    rhs_static = np.concatenate([
        blocks["b_b"][:n_b], blocks["b_l"], tau * blocks["b_w_src"],
        -tau * blocks["f_cells"],
    ])
    return BlockSystem(variant=variant, tau=tau, layout=layout, blocks=blocks,
                       matrix=matrix, rhs_static=rhs_static, slices=slices)


def condense_bubbles(system: BlockSystem) -> BlockSystem:
    """Schur-eliminate the bubble block of the diagonal variant.

    The bubble unknowns decouple cell-locally against the diagonal, so the
    reduced matrix keeps the linear/flux/pressure stencils.  The returned
    system carries the recovery data; see :func:`recover_bubbles`.
    """
    if system.variant != "diagonal":
        raise ValueError("condensation requires the diagonal bubble variant")
    blocks = system.blocks
    D = blocks["D_bb"]
    if np.any(D <= 0):
        raise ValueError("nonpositive diagonal bubble entry")
    Dinv = sp.diags(1.0 / D)
    A_bl, A_ll = blocks["A_bl"], blocks["A_ll"]
    G_b, G_l, M_p = blocks["G_b"], blocks["G_l"], blocks["M_p"]
    M_w, G = blocks["M_w"], blocks["G"]
    tau = system.tau

    S_ll = (A_ll - A_bl.T @ Dinv @ A_bl).tocsr()
    S_lp = (G_l - A_bl.T @ Dinv @ G_b).tocsr()
    S_pp = (-M_p - G_b.T @ Dinv @ G_b).tocsr()
    matrix = sp.bmat([
        [S_ll, None, S_lp],
        [None, tau * M_w, tau * G],
        [S_lp.T, tau * G.T, S_pp],
    ], format="csr")

    b_b = blocks["b_b"]
    correction = A_bl.T @ Dinv @ b_b
    n_lf, n_w, n_p = S_ll.shape[0], M_w.shape[0], M_p.shape[0]
    offsets = np.cumsum([0, n_lf, n_w, n_p])
    slices = {
        "l": slice(offsets[0], offsets[1]),
        "w": slice(offsets[1], offsets[2]),
        "p": slice(offsets[2], offsets[3]),
    }
    rhs_static = np.concatenate([
        blocks["b_l"] - correction,
        tau * blocks["b_w_src"],
        -tau * blocks["f_cells"] - G_b.T @ Dinv @ b_b,
    ])
    recovery = {"D_inv": 1.0 / D, "A_bl": A_bl, "G_b": G_b, "b_b": b_b}
    return BlockSystem(variant="diagonal-condensed", tau=tau, layout=system.layout,
                       blocks=blocks, matrix=matrix, rhs_static=rhs_static,
                       slices=slices, recovery=recovery)


def recover_bubbles(system: BlockSystem, U_l: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Back-substitute the condensed-out bubble coefficients."""
    if system.recovery is None:
        raise ValueError("system carries no recovery data")
    r = system.recovery
    return r["D_inv"] * (r["b_b"] - r["A_bl"] @ U_l - r["G_b"] @ P)


def assemble_stokes(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                    variant: str, rhs_degree=None) -> BlockSystem:
    """Stabilized P1(+bubble)-P0 Stokes system with a zero-mean multiplier.

    variant "enriched" keeps the full bubble block, "diagonal" its scaled
    diagonal.  The whole boundary must be clamped (velocity Dirichlet);
    params.u_D lifts nonzero wall data into the right-hand side, None
    keeps the homogeneous wall.  The single Lagrange multiplier pins the
    pressure mean without touching the error norms.
    """
    if variant not in ("enriched", "diagonal"):
        raise ValueError(f"unknown variant {variant!r}")
    boundary_tags = mesh.face_tags[mesh.boundary_faces()]
    if not (boundary_tags == FACE_CLAMPED).all():
        raise ValueError("the Stokes wall must be clamped on the whole boundary")

    sparams = replace(params, mu=params.nu, lam=0.0, alpha=1.0)
    A_bb, A_bl_full, A_ll_full = assemble_elasticity(mesh, sparams, layout,
                                                     reduced=False)
    D_bb = assemble_diagonal_bubble(mesh, sparams, layout)
    G_b, G_l_full, _ = assemble_coupling(mesh, sparams, layout, reduced=False)
    b_b, b_l, _, _ = assemble_body_loads(mesh, sparams, layout, rhs_degree)

    free = np.flatnonzero(layout.u_free)
    A_bl = A_bl_full[:, free].tocsr()
    A_ll = A_ll_full[free][:, free].tocsr()
    G_l = G_l_full[free].tocsr()
    b_p = np.zeros(layout.n_p)
    if params.u_D is not None:
        lift = np.asarray(params.u_D(mesh.vertices), dtype=float).ravel()
        lift[layout.u_free] = 0.0
        b_l = b_l - (A_ll_full @ lift)[free]
        b_b = b_b - A_bl_full @ lift
        b_p = -(G_l_full.T @ lift)

    n_b, n_p = layout.n_b, layout.n_p
    vols = sp.csr_matrix(mesh.cell_volumes.reshape(-1, 1))
    if n_b == 0:
        rows = [
            [A_ll, G_l, None],
            [G_l.T, None, vols],
            [None, vols.T, None],
        ]
    else:
        top = sp.diags(D_bb).tocsr() if variant == "diagonal" else A_bb
        rows = [
            [top, A_bl, G_b, None],
            [A_bl.T, A_ll, G_l, None],
            [G_b.T, G_l.T, None, vols],
            [None, None, vols.T, None],
        ]
    matrix = sp.bmat(rows, format="csr")

    n_lf = A_ll.shape[0]
    offsets = np.cumsum([0, n_b, n_lf, n_p, 1])
    slices = {
        "b": slice(offsets[0], offsets[1]),
        "l": slice(offsets[1], offsets[2]),
        "p": slice(offsets[2], offsets[3]),
        "m": slice(offsets[3], offsets[4]),
    }
    rhs_static = np.concatenate([b_b[:n_b], b_l, b_p, np.zeros(1)])
    blocks = {
        "layout": layout, "A_bb": A_bb, "D_bb": D_bb, "A_bl": A_bl, "A_ll": A_ll,
        "G_b": G_b, "G_l": G_l, "vols": vols, "b_b": b_b, "b_l": b_l,
    }
    name = "stokes-diagonal" if variant == "diagonal" else "stokes"
    return BlockSystem(variant=name, tau=0.0, layout=layout, blocks=blocks,
                       matrix=matrix, rhs_static=rhs_static, slices=slices)


def condense_stokes(system: BlockSystem) -> BlockSystem:
    """Schur-eliminate the diagonal bubble block of the Stokes system."""
    if system.variant != "stokes-diagonal":
        raise ValueError("condensation requires the diagonal Stokes variant")
    blocks = system.blocks
    D = blocks["D_bb"]
    if np.any(D <= 0):
        raise ValueError("nonpositive diagonal bubble entry")
    Dinv = sp.diags(1.0 / D)
    A_bl, A_ll = blocks["A_bl"], blocks["A_ll"]
    G_b, G_l, vols = blocks["G_b"], blocks["G_l"], blocks["vols"]

    S_ll = (A_ll - A_bl.T @ Dinv @ A_bl).tocsr()
    S_lp = (G_l - A_bl.T @ Dinv @ G_b).tocsr()
    S_pp = (-G_b.T @ Dinv @ G_b).tocsr()
    matrix = sp.bmat([
        [S_ll, S_lp, None],
        [S_lp.T, S_pp, vols],
        [None, vols.T, None],
    ], format="csr")

    b_b = system.rhs_static[system.slices["b"]]
    n_lf, n_p = S_ll.shape[0], S_pp.shape[0]
    offsets = np.cumsum([0, n_lf, n_p, 1])
    slices = {
        "l": slice(offsets[0], offsets[1]),
        "p": slice(offsets[1], offsets[2]),
        "m": slice(offsets[2], offsets[3]),
    }
    rhs_static = np.concatenate([
        system.rhs_static[system.slices["l"]] - A_bl.T @ Dinv @ b_b,
        system.rhs_static[system.slices["p"]] - G_b.T @ Dinv @ b_b,
        np.zeros(1),
    ])
    recovery = {"D_inv": 1.0 / D, "A_bl": A_bl, "G_b": G_b, "b_b": b_b}
    return BlockSystem(variant="stokes-condensed", tau=0.0, layout=system.layout,
                       blocks=blocks, matrix=matrix, rhs_static=rhs_static,
                       slices=slices, recovery=recovery)
