import numpy as np
import pytest
import scipy.sparse as sp

from bubblefem.assembly import (
    MaterialParams,
    assemble_biot_blocks,
    assemble_body_loads,
    assemble_coupling,
    assemble_darcy,
    assemble_diagonal_bubble,
    assemble_elasticity,
    assemble_stokes,
    build_biot_system,
    condense_bubbles,
    condense_stokes,
    recover_bubbles,
)
from bubblefem.fespace import build_dof_layout, interpolate_p1, interpolate_rt0, quadrature
from bubblefem.mesh import (
    ALL_TRACTION,
    build_structured_unit_square,
    classify_boundary,
    mesh_from_arrays,
    perturb_vertices,
)
from bubblefem.solver import solve_direct


def reference_triangle_mesh():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = mesh_from_arrays(vertices, np.array([[0, 1, 2]]))
    return classify_boundary(mesh, ALL_TRACTION)


def polynomial_sources():
    return dict(
        rho_g=lambda x: np.column_stack([1.0 + x[:, 0], x[:, 1] - x[:, 0] ** 2]),
        rho_f_g=lambda x: np.column_stack([x[:, 1], -x[:, 0]]),
        source_f=lambda x: 1.0 + 0 * x[:, 0],
    )


# ----------------------------------------------------------- symbolic oracle

def test_single_cell_entries_match_symbolic_oracle():
    import sympy as sym

    mu, lame, mu_f, kperm = 1.0, 2.0, 3.0, 0.5
    mesh = reference_triangle_mesh()
    layout = build_dof_layout(mesh)
    params = MaterialParams(lam=lame, mu=mu, mu_f=mu_f, K=kperm)
    A_bb, A_bl, A_ll = assemble_elasticity(mesh, params, layout)
    M_w, G = assemble_darcy(mesh, params, layout)
    G_b, G_l, M_p = assemble_coupling(mesh, params, layout)

    x, y = sym.symbols("x y")
    lams = [1 - x - y, x, y]

    def integrate(expr):
        return float(sym.integrate(sym.integrate(expr, (y, 0, 1 - x)), (x, 0, 1)))

    def energy(u, v):
        Ju = sym.Matrix([[sym.diff(u[0], x), sym.diff(u[0], y)],
                         [sym.diff(u[1], x), sym.diff(u[1], y)]])
        Jv = sym.Matrix([[sym.diff(v[0], x), sym.diff(v[0], y)],
                         [sym.diff(v[1], x), sym.diff(v[1], y)]])
        eps_u, eps_v = (Ju + Ju.T) / 2, (Jv + Jv.T) / 2
        integrand = (2 * mu * sum(eps_u[i, j] * eps_v[i, j]
                                  for i in range(2) for j in range(2))
                     + lame * Ju.trace() * Jv.trace())
        return integrate(integrand)

    # faces sorted by vertex tuple: (0,1) y=0, (0,2) x=0, (1,2) hypotenuse
    root2 = sym.sqrt(2)
    normals = [(0, -1 * sym.Integer(1)), (-1 * sym.Integer(1), 0),
               (1 / root2, 1 / root2)]
    phis = [lams[0] * lams[1], lams[0] * lams[2], lams[1] * lams[2]]
    bubbles = [(phis[f] * normals[f][0], phis[f] * normals[f][1]) for f in range(3)]
    hats = [(lams[k] if c == 0 else 0, lams[k] if c == 1 else 0)
            for k in range(3) for c in range(2)]

    for i in range(3):
        for j in range(3):
            assert abs(A_bb[i, j] - energy(bubbles[i], bubbles[j])) < 1e-13
        for j in range(6):
            assert abs(A_bl[i, j] - energy(bubbles[i], hats[j])) < 1e-13
    for i in range(6):
        for j in range(6):
            assert abs(A_ll[i, j] - energy(hats[i], hats[j])) < 1e-13

    # RT0 basis on the single cell: scaled offsets from the opposite vertex
    psis = [(x, y - 1), (x - 1, y), (root2 * x, root2 * y)]
    for i in range(3):
        for j in range(3):
            want = (mu_f / kperm) * integrate(
                psis[i][0] * psis[j][0] + psis[i][1] * psis[j][1])
            assert abs(M_w[i, j] - want) < 1e-13

    for i, want in enumerate([-1.0, -1.0, -np.sqrt(2.0)]):
        assert abs(G[i, 0] - want) < 1e-14
        assert abs(G_b[i, 0] - want / 6.0) < 1e-14
    want_gl = -0.5 * np.array([-1.0, -1.0, 1.0, 0.0, 0.0, 1.0])
    assert np.abs(G_l.toarray().ravel() - want_gl).max() < 1e-14
    assert abs(M_p[0, 0] - 0.5) < 1e-16


# ------------------------------------------------------------ elastic energy

def test_rigid_mode_has_zero_energy():
    mesh = classify_boundary(
        perturb_vertices(build_structured_unit_square(3), 0.05, seed=11),
        ALL_TRACTION)
    layout = build_dof_layout(mesh)
    params = MaterialParams(lam=2.0, mu=1.0)
    _, _, A_ll = assemble_elasticity(mesh, params, layout)
    rigid = interpolate_p1(lambda x: np.column_stack([-x[:, 1], x[:, 0]]), mesh)
    energy = rigid @ (A_ll @ rigid)
    assert abs(energy) < 1e-11 * abs(A_ll).max()


def test_linear_field_energy_closed_form():
    # u = (x, y): eps = I, div = 2, so a(u,u) = (4 mu + 4 lam) |domain|
    mesh = classify_boundary(build_structured_unit_square(4), ALL_TRACTION)
    layout = build_dof_layout(mesh)
    _, _, A_ll = assemble_elasticity(mesh, MaterialParams(lam=2.0, mu=1.0), layout)
    u = interpolate_p1(lambda x: x, mesh)
    assert abs(u @ (A_ll @ u) - 12.0) < 1e-12


# ----------------------------------------------------------- diagonal bubble

def test_diagonal_equals_scaled_stiffness_diagonal():
    mesh = perturb_vertices(build_structured_unit_square(3), 0.05, seed=12)
    layout = build_dof_layout(mesh)
    params = MaterialParams(lam=2.0, mu=1.0)
    A_bb, _, _ = assemble_elasticity(mesh, params, layout)
    D = assemble_diagonal_bubble(mesh, params, layout)
    assert (D > 0).all()
    assert np.array_equal(D, 3.0 * A_bb.diagonal())


def test_diagonal_translation_invariance():
    mesh = build_structured_unit_square(4)
    layout = build_dof_layout(mesh)
    D = assemble_diagonal_bubble(mesh, MaterialParams(lam=2.0, mu=1.0), layout)
    interior = mesh.interior_faces()
    # group interior faces by normal direction: same class, same entry
    for direction in ([1.0, 0.0], [0.0, 1.0]):
        aligned = [f for f in interior
                   if abs(abs(mesh.face_normals[f] @ direction) - 1.0) < 1e-12]
        vals = D[layout.face_to_bubble[aligned]]
        assert np.ptp(vals) < 1e-15 * vals[0]


# -------------------------------------------------------------------- darcy

def test_darcy_mass_scales_with_viscosity_over_permeability():
    mesh = perturb_vertices(build_structured_unit_square(2), 0.05, seed=13)
    layout = build_dof_layout(mesh)
    M1, G1 = assemble_darcy(mesh, MaterialParams(K=1.0, mu_f=1.0), layout)
    M2, G2 = assemble_darcy(mesh, MaterialParams(K=2.0, mu_f=3.0), layout)
    assert abs(M2 - 1.5 * M1).max() < 1e-14 * abs(M1).max()
    assert abs(G2 - G1).max() == 0.0
    # tensor permeability reduces to the scalar one
    M3, _ = assemble_darcy(mesh, MaterialParams(K=2.0 * np.eye(2), mu_f=3.0), layout)
    assert abs(M3 - M2).max() < 1e-14 * abs(M2).max()


def test_constant_flux_is_divergence_free():
    mesh = classify_boundary(
        perturb_vertices(build_structured_unit_square(3), 0.04, seed=14),
        ALL_TRACTION)
    layout = build_dof_layout(mesh)
    _, G = assemble_darcy(mesh, MaterialParams(), layout)
    W = interpolate_rt0(lambda x: np.broadcast_to([1.0, 0.0], x.shape), mesh)
    assert np.abs(G.T @ W).max() < 1e-13


# ----------------------------------------------------------------- coupling

def test_bubble_coupling_surface_integral_oracle():
    # G_b[e, T] = -alpha * sign * |e|/6: the surface integral of phi_e
    mesh = perturb_vertices(build_structured_unit_square(2), 0.05, seed=15)
    layout = build_dof_layout(mesh)
    G_b, _, _ = assemble_coupling(mesh, MaterialParams(alpha=1.0), layout)
    for f in mesh.interior_faces():
        e = layout.face_to_bubble[f]
        t_plus, t_minus = mesh.face_cells[f]
        edge = abs(mesh.face_areas[f])
        assert abs(G_b[e, t_plus] - (-edge / 6.0)) < 1e-14
        assert abs(G_b[e, t_minus] - (edge / 6.0)) < 1e-14


def test_coupling_scales_with_alpha_and_mass_with_storage():
    mesh = build_structured_unit_square(2)
    layout = build_dof_layout(mesh)
    G_b1, G_l1, M_p1 = assemble_coupling(mesh, MaterialParams(alpha=1.0, M=1.0), layout)
    G_b2, G_l2, M_p2 = assemble_coupling(mesh, MaterialParams(alpha=0.5, M=1e6), layout)
    assert abs(G_b2 - 0.5 * G_b1).max() < 1e-15
    assert abs(G_l2 - 0.5 * G_l1).max() < 1e-15
    assert np.allclose(M_p2.diagonal(), mesh.cell_volumes * 1e-6)
    with pytest.raises(ValueError):
        MaterialParams(alpha=0.0)


# ------------------------------------------------------------ biot system

def test_system_dimensions_and_slices():
    mesh = build_structured_unit_square(8)  # clamped everywhere
    layout = build_dof_layout(mesh)
    blocks = assemble_biot_blocks(mesh, MaterialParams(), layout)
    system = build_biot_system(blocks, "enriched", tau=1.0)
    # counting oracle: 176 bubbles + 98 free linear + 176 free flux + 128 cells
    assert system.matrix.shape == (578, 578)
    assert system.slices["b"] == slice(0, 176)
    assert system.slices["l"] == slice(176, 274)
    assert system.slices["w"] == slice(274, 450)
    assert system.slices["p"] == slice(450, 578)


@pytest.mark.parametrize("variant", ["enriched", "diagonal"])
def test_biot_system_symmetry(variant):
    mesh = perturb_vertices(build_structured_unit_square(3), 0.05, seed=16)
    layout = build_dof_layout(mesh)
    blocks = assemble_biot_blocks(mesh, MaterialParams(lam=2.0, mu=1.0, K=1e-6), layout)
    system = build_biot_system(blocks, variant, tau=1.0)
    assert abs(system.matrix - system.matrix.T).max() == 0.0


def test_unenriched_system_has_no_bubbles():
    mesh = build_structured_unit_square(4)
    layout = build_dof_layout(mesh, enrich=False)
    assert layout.n_b == 0
    blocks = assemble_biot_blocks(mesh, MaterialParams(), layout)
    system = build_biot_system(blocks, "enriched", tau=1.0)
    n = layout.u_free.sum() + layout.n_w + layout.n_p
    assert system.matrix.shape == (n, n)
    assert abs(system.matrix - system.matrix.T).max() == 0.0


def test_tau_row_scaling_identity():
    mesh = build_structured_unit_square(3)
    layout = build_dof_layout(mesh)
    blocks = assemble_biot_blocks(mesh, MaterialParams(K=1e-8,
                                                       **polynomial_sources()), layout)
    s1 = build_biot_system(blocks, "diagonal", tau=0.3)
    s2 = build_biot_system(blocks, "diagonal", tau=3.0)
    w, p = s1.slices["w"], s1.slices["p"]
    A1, A2 = s1.matrix.toarray(), s2.matrix.toarray()
    assert np.allclose(A2[w], 10.0 * A1[w], rtol=1e-14)
    assert np.allclose(A2[p, w], 10.0 * A1[p, w], rtol=1e-14)
    assert np.allclose(s2.rhs_static[w], 10.0 * s1.rhs_static[w], rtol=1e-14)
    assert np.allclose(s2.rhs_static[p], 10.0 * s1.rhs_static[p], rtol=1e-14)
    b, l = s1.slices["b"], s1.slices["l"]
    for sl in (b, l):
        assert np.array_equal(A2[sl], A1[sl])
        assert np.array_equal(s2.rhs_static[sl], s1.rhs_static[sl])


def test_boundary_pressure_enters_darcy_rhs():
    mesh = classify_boundary(build_structured_unit_square(2), ALL_TRACTION)
    layout = build_dof_layout(mesh)
    params = MaterialParams(p_D=lambda x: np.ones(len(x)))
    _, _, b_w, _ = assemble_body_loads(mesh, params, layout)
    w_faces = np.flatnonzero(layout.w_free)
    for i, f in enumerate(w_faces):
        if mesh.face_cells[f, 1] < 0:
            assert abs(b_w[i] + mesh.face_areas[f]) < 1e-15
        else:
            assert b_w[i] == 0.0


# -------------------------------------------------------------- condensation

def test_condensation_matches_direct_solve():
    mesh = perturb_vertices(build_structured_unit_square(4), 0.04, seed=17)
    layout = build_dof_layout(mesh)
    params = MaterialParams(lam=2.0, mu=1.0, M=1e3, K=1e-4, **polynomial_sources())
    blocks = assemble_biot_blocks(mesh, params, layout)
    full = build_biot_system(blocks, "diagonal", tau=0.7)
    x = solve_direct(full.matrix, full.rhs_static)

    condensed = condense_bubbles(full)
    assert abs(condensed.matrix - condensed.matrix.T).max() < 1e-15
    y = solve_direct(condensed.matrix, condensed.rhs_static)
    U_l, W, P = (y[condensed.slices[k]] for k in ("l", "w", "p"))
    U_b = recover_bubbles(condensed, U_l, P)

    for got, key in ((U_b, "b"), (U_l, "l"), (W, "w"), (P, "p")):
        want = x[full.slices[key]]
        assert np.abs(got - want).max() < 1e-9 * max(1.0, np.abs(want).max())


def test_condensed_pressure_block_negative_definite():
    mesh = perturb_vertices(build_structured_unit_square(3), 0.05, seed=18)
    layout = build_dof_layout(mesh)
    blocks = assemble_biot_blocks(mesh, MaterialParams(M=1e6), layout)
    system = condense_bubbles(build_biot_system(blocks, "diagonal", tau=1.0))
    S_pp = system.matrix[system.slices["p"], system.slices["p"]].toarray()
    assert np.linalg.eigvalsh(S_pp).max() < 0.0


def test_condense_requires_diagonal_variant():
    mesh = build_structured_unit_square(2)
    layout = build_dof_layout(mesh)
    blocks = assemble_biot_blocks(mesh, MaterialParams(), layout)
    with pytest.raises(ValueError):
        condense_bubbles(build_biot_system(blocks, "enriched", tau=1.0))


# -------------------------------------------------------------------- stokes

def stokes_force(x):
    return np.column_stack([np.sin(x[:, 0]), np.cos(x[:, 1])])


def test_stokes_diagonal_differs_only_in_bubble_block():
    mesh = build_structured_unit_square(3)
    layout = build_dof_layout(mesh)
    params = MaterialParams(nu=1.0, rho_g=stokes_force)
    full = assemble_stokes(mesh, params, layout, "enriched")
    diag = assemble_stokes(mesh, params, layout, "diagonal")
    delta = (full.matrix - diag.matrix).tocoo()
    nb = layout.n_b
    live = delta.data != 0.0  # subtraction keeps explicit zeros in the pattern
    assert (delta.row[live] < nb).all() and (delta.col[live] < nb).all()
    assert np.array_equal(full.rhs_static, diag.rhs_static)
    assert abs(full.matrix - full.matrix.T).max() == 0.0


def test_stokes_divergence_annihilates_constants():
    mesh = build_structured_unit_square(3)
    layout = build_dof_layout(mesh)
    system = assemble_stokes(mesh, MaterialParams(), layout, "enriched")
    ones = np.ones(layout.n_p)
    assert np.abs(system.blocks["G_l"] @ ones).max() < 1e-13
    assert np.abs(system.blocks["G_b"] @ ones).max() < 1e-13


def test_stokes_rejects_open_boundary():
    mesh = classify_boundary(build_structured_unit_square(2), ALL_TRACTION)
    layout = build_dof_layout(mesh)
    with pytest.raises(ValueError):
        assemble_stokes(mesh, MaterialParams(), layout, "enriched")


def test_stokes_condensation_matches_direct_solve():
    mesh = perturb_vertices(build_structured_unit_square(4), 0.04, seed=19)
    layout = build_dof_layout(mesh)
    params = MaterialParams(nu=2.0, rho_g=stokes_force)
    full = assemble_stokes(mesh, params, layout, "diagonal")
    x = solve_direct(full.matrix, full.rhs_static)
    condensed = condense_stokes(full)
    y = solve_direct(condensed.matrix, condensed.rhs_static)
    U_l, P = y[condensed.slices["l"]], y[condensed.slices["p"]]
    U_b = recover_bubbles(condensed, U_l, P)
    for got, key in ((U_b, "b"), (U_l, "l"), (P, "p")):
        want = x[full.slices[key]]
        assert np.abs(got - want).max() < 1e-9 * max(1.0, np.abs(want).max())
    # condensed dimension: free linear dofs + cells + one multiplier
    assert condensed.matrix.shape[0] == layout.u_free.sum() + layout.n_p + 1


def test_stokes_blocks_equal_biot_limit_blocks():
    # with mu = nu, lam = 0, alpha = 1 the displacement blocks coincide
    mesh = build_structured_unit_square(2)
    layout = build_dof_layout(mesh)
    params = MaterialParams(lam=0.0, mu=1.0, alpha=1.0, nu=1.0)
    A_bb, A_bl, A_ll = assemble_elasticity(mesh, params, layout)
    stokes = assemble_stokes(mesh, params, layout, "enriched")
    assert abs(stokes.blocks["A_bb"] - A_bb).max() == 0.0
    assert abs(stokes.blocks["A_bl"] - A_bl).max() == 0.0
    assert abs(stokes.blocks["A_ll"] - A_ll).max() == 0.0
    G_b, G_l, _ = assemble_coupling(mesh, params, layout)
    assert abs(stokes.blocks["G_b"] - G_b).max() == 0.0
    assert abs(stokes.blocks["G_l"] - G_l).max() == 0.0


# --------------------------------------------------------------- inequality

def test_plain_form_bounded_by_diagonal_form():
    mesh = perturb_vertices(build_structured_unit_square(3), 0.05, seed=20)
    layout = build_dof_layout(mesh)
    params = MaterialParams(lam=2.0, mu=1.0)
    A_bb, A_bl, A_ll = assemble_elasticity(mesh, params, layout)
    D = assemble_diagonal_bubble(mesh, params, layout)
    rng = np.random.default_rng(21)
    for _ in range(200):
        xb = rng.standard_normal(layout.n_b)
        xl = rng.standard_normal(int(layout.u_free.sum()))
        cross = 2.0 * xb @ (A_bl @ xl) + xl @ (A_ll @ xl)
        a_full = xb @ (A_bb @ xb) + cross
        a_diag = xb @ (D * xb) + cross
        assert a_full <= a_diag + 1e-12 * abs(a_diag)
