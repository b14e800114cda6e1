import numpy as np
import pytest

from bubblefem.mesh import (
    ALL_CLAMPED,
    ALL_TRACTION,
    FACE_CLAMPED,
    FACE_INTERIOR,
    FACE_TRACTION,
    BoundarySpec,
    MeshError,
    build_structured_unit_square,
    classify_boundary,
    enumerate_faces,
    load_mesh,
    mesh_from_arrays,
    perturb_vertices,
    save_mesh,
)


def two_triangle_mesh():
    # unit square split along the right-down diagonal
    return build_structured_unit_square(1)


def test_smallest_grid_counts():
    mesh = two_triangle_mesh()
    assert mesh.n_cells == 2
    assert mesh.n_vertices == 4
    assert mesh.n_faces == 5
    assert len(mesh.boundary_faces()) == 4
    assert len(mesh.interior_faces()) == 1


def test_structured_counts_n8():
    mesh = build_structured_unit_square(8)
    assert mesh.n_cells == 128
    assert mesh.n_vertices == 81
    # Euler count: F = 3C/2 + B/2 with B = 4N boundary edges
    assert mesh.n_faces == 208
    assert len(mesh.boundary_faces()) == 32
    assert len(mesh.interior_faces()) == 176


def test_structured_counts_n2():
    mesh = build_structured_unit_square(2)
    assert len(mesh.interior_faces()) == 8
    assert len(mesh.boundary_faces()) == 8


@pytest.mark.parametrize("diagonal", ["right-down", "right-up"])
def test_area_partition(diagonal):
    mesh = build_structured_unit_square(2, diagonal=diagonal)
    assert abs(mesh.cell_volumes.sum() - 1.0) < 1e-14
    assert np.allclose(mesh.cell_volumes, 1.0 / 8.0)


def test_invalid_n_rejected():
    with pytest.raises(MeshError):
        build_structured_unit_square(0)


def test_face_adjacency_counts():
    mesh = build_structured_unit_square(3)
    interior = mesh.face_cells[mesh.interior_faces()]
    assert (interior >= 0).all()
    boundary = mesh.face_cells[mesh.boundary_faces()]
    assert (boundary[:, 0] >= 0).all() and (boundary[:, 1] == -1).all()
    # T+ is the smaller adjacent cell id
    assert (interior[:, 0] < interior[:, 1]).all()


def test_normals_unit_and_consistent():
    mesh = build_structured_unit_square(4)
    norms = np.linalg.norm(mesh.face_normals, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-14
    # the two cell-local outward normals of an interior face are +-n_e
    for f in mesh.interior_faces():
        t_plus, t_minus = mesh.face_cells[f]
        for t, want in ((t_plus, 1.0), (t_minus, -1.0)):
            k = int(np.where(mesh.cell_faces[t] == f)[0][0])
            g = mesh.grad_lambda[t, k]
            outward = -g / np.linalg.norm(g)
            assert np.linalg.norm(outward - want * mesh.face_normals[f]) < 1e-14
            assert mesh.cell_face_signs[t, k] == want


def test_boundary_normal_outward():
    mesh = build_structured_unit_square(4)
    centroids = mesh.face_centroids()
    for f in mesh.boundary_faces():
        x = centroids[f]
        n = mesh.face_normals[f]
        if abs(x[0] - 1.0) < 1e-12:
            assert np.linalg.norm(n - np.array([1.0, 0.0])) < 1e-14
        elif abs(x[0]) < 1e-12:
            assert np.linalg.norm(n - np.array([-1.0, 0.0])) < 1e-14
        elif abs(x[1] - 1.0) < 1e-12:
            assert np.linalg.norm(n - np.array([0.0, 1.0])) < 1e-14
        else:
            assert np.linalg.norm(n - np.array([0.0, -1.0])) < 1e-14


def test_enumerate_faces_idempotent():
    mesh = build_structured_unit_square(3)
    faces, face_cells, normals, areas, cell_faces, signs = enumerate_faces(mesh)
    assert np.array_equal(faces, mesh.faces)
    assert np.array_equal(face_cells, mesh.face_cells)
    assert np.array_equal(normals, mesh.face_normals)
    assert np.array_equal(areas, mesh.face_areas)
    assert np.array_equal(cell_faces, mesh.cell_faces)
    assert np.array_equal(signs, mesh.cell_face_signs)


def test_nonmanifold_rejected():
    # three triangles sharing the edge (0, 1)
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -1.0]])
    cells = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    with pytest.raises(MeshError):
        mesh_from_arrays(vertices, cells)


def test_grad_lambda_properties():
    mesh = build_structured_unit_square(3)
    # rows sum to zero and lambda_k(vertex j) = delta_kj
    assert np.abs(mesh.grad_lambda.sum(axis=1)).max() < 1e-13
    rng = np.random.default_rng(0)
    for t in rng.integers(0, mesh.n_cells, size=5):
        geo = mesh.geometry(int(t))
        for k in range(3):
            for j in range(3):
                # lambda_k(x) = 1 + grad lambda_k . (x - v_k)
                lam = 1.0 + geo.grad_lambda[k] @ (geo.vertices[j] - geo.vertices[k])
                assert abs(lam - (1.0 if j == k else 0.0)) < 1e-13
            # lambda_k at the face midpoint opposite k is zero
            mid = np.delete(geo.vertices, k, axis=0).mean(axis=0)
            lam_mid = 1.0 + geo.grad_lambda[k] @ (mid - geo.vertices[k])
            assert abs(lam_mid) < 1e-13


def test_face_area_gradient_identity():
    # |e_k| = d |T| |grad lambda_k|
    mesh = build_structured_unit_square(3)
    for t in range(0, mesh.n_cells, 5):
        geo = mesh.geometry(t)
        for k in range(3):
            lhs = geo.face_areas[k]
            rhs = 2.0 * geo.volume * np.linalg.norm(geo.grad_lambda[k])
            assert abs(lhs - rhs) < 1e-13


def test_refinement_quarters_areas():
    coarse = build_structured_unit_square(4)
    fine = build_structured_unit_square(8)
    assert abs(fine.cell_volumes.max() - coarse.cell_volumes.max() / 4.0) < 1e-15
    assert abs(fine.cell_diameters.max() - coarse.cell_diameters.max() / 2.0) < 1e-14


def test_classify_boundary_full_sets():
    mesh = build_structured_unit_square(2)
    clamped = classify_boundary(mesh, ALL_CLAMPED)
    assert (clamped.face_tags[clamped.boundary_faces()] == FACE_CLAMPED).all()
    assert (clamped.face_tags[clamped.interior_faces()] == FACE_INTERIOR).all()
    traction = classify_boundary(mesh, ALL_TRACTION)
    assert (traction.face_tags[traction.boundary_faces()] == FACE_TRACTION).all()


def test_classify_boundary_split_and_error():
    mesh = build_structured_unit_square(2)
    spec = BoundarySpec(traction=lambda x: x[1] > 1.0 - 1e-12,
                        clamped=lambda x: x[1] <= 1.0 - 1e-12)
    tagged = classify_boundary(mesh, spec)
    n_traction = (tagged.face_tags == FACE_TRACTION).sum()
    assert n_traction == 2
    # predicates covering only 3 sides leave the x=1 faces untagged
    three_sides = BoundarySpec(clamped=lambda x: x[0] < 1.0 - 1e-12)
    with pytest.raises(MeshError):
        classify_boundary(mesh, three_sides)


def test_perturb_keeps_boundary_and_tags():
    mesh = classify_boundary(build_structured_unit_square(4), ALL_TRACTION)
    moved = perturb_vertices(mesh, amplitude=0.2 / 4, seed=7)
    assert np.array_equal(moved.faces, mesh.faces)
    assert np.array_equal(moved.face_tags, mesh.face_tags)
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    on_boundary[mesh.faces[mesh.boundary_faces()].ravel()] = True
    assert np.array_equal(moved.vertices[on_boundary], mesh.vertices[on_boundary])
    assert not np.array_equal(moved.vertices[~on_boundary], mesh.vertices[~on_boundary])
    assert abs(moved.cell_volumes.sum() - 1.0) < 1e-12
    assert moved.cell_volumes.min() > 0


def test_mesh_io_round_trip(tmp_path):
    mesh = perturb_vertices(build_structured_unit_square(3), 0.05, seed=3)
    path = tmp_path / "mesh.txt"
    save_mesh(mesh, path)
    loaded = load_mesh(path)
    assert np.array_equal(loaded.vertices, mesh.vertices)
    assert np.array_equal(loaded.cells, mesh.cells)
    # writing again is byte-identical
    path2 = tmp_path / "again.txt"
    save_mesh(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_tetrahedral_mesh_basics():
    # unit cube corner tet plus a neighbor: 3d path is structural but must hold
    vertices = np.array([
        [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
    ])
    cells = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    mesh = mesh_from_arrays(vertices, cells)
    assert mesh.d == 3
    assert mesh.n_faces == 7
    assert len(mesh.interior_faces()) == 1
    f = mesh.interior_faces()[0]
    assert np.abs(np.linalg.norm(mesh.face_normals[f]) - 1.0) < 1e-14
    assert abs(mesh.cell_volumes[0] - 1.0 / 6.0) < 1e-15
    # shared face {1,2,3} has area sqrt(3)/2
    assert abs(mesh.face_areas[f] - np.sqrt(3.0) / 2.0) < 1e-14
