"""Simplicial meshes with a fixed global orientation for every face.

Cells are d-simplices stored as sorted vertex tuples, faces are their
(d-1)-subsimplices.  Each face carries one normal n_e for the whole run,
pointing out of the adjacent cell with the smaller index (T+), so assembled
signs never depend on traversal order.  Meshes are immutable once built.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

FACE_INTERIOR = 0
FACE_TRACTION = 1  # natural data for displacement, prescribed boundary pressure
FACE_CLAMPED = 2   # essential: u = 0 and w.n = 0

# h_T / rho_T above this is suspicious for the error constants
REGULARITY_WARN = 20.0


class MeshError(Exception):
    """Inconsistent connectivity or incomplete boundary data."""


@dataclass(frozen=True)
class CellGeometry:
    """Affine geometry of a single simplex.

    Attributes
    ----------
    vertices : (d+1, d) array
        Coordinates, ordered like the cell's vertex tuple.
    grad_lambda : (d+1, d) array
        Row k holds the constant gradient of the barycentric coordinate
        lambda_k.  Rows sum to zero.
    volume : float
    face_areas : (d+1,) array
        Entry k is the measure of the face opposite vertex k.
    face_ids : (d+1,) array
        Global face number opposite local vertex k.
    face_signs : (d+1,) array
        +1 where the global normal n_e points out of this cell, else -1.
    """

    vertices: np.ndarray
    grad_lambda: np.ndarray
    volume: float
    face_areas: np.ndarray
    face_ids: np.ndarray
    face_signs: np.ndarray


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh with globally oriented faces.

    Boundary faces are tagged FACE_CLAMPED on construction; use
    ``classify_boundary`` to assign a different split.
    """

    d: int
    vertices: np.ndarray        # (n_vertices, d)
    cells: np.ndarray           # (n_cells, d+1), vertex ids sorted per cell
    faces: np.ndarray           # (n_faces, d), vertex ids sorted per face
    face_cells: np.ndarray      # (n_faces, 2): [T+, T-], T- = -1 on the boundary
    face_normals: np.ndarray    # (n_faces, d), unit, outward from T+
    face_areas: np.ndarray      # (n_faces,)
    face_tags: np.ndarray       # (n_faces,), FACE_* labels
    cell_faces: np.ndarray      # (n_cells, d+1): global face opposite local vertex k
    cell_face_signs: np.ndarray  # (n_cells, d+1)
    grad_lambda: np.ndarray     # (n_cells, d+1, d)
    cell_volumes: np.ndarray    # (n_cells,)
    cell_diameters: np.ndarray  # (n_cells,)
    cell_regularity: np.ndarray  # (n_cells,) ratio h_T / rho_T

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def h_max(self) -> float:
        return float(self.cell_diameters.max())

    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def geometry(self, t: int) -> CellGeometry:
        """Return the affine geometry of cell ``t``."""
        return CellGeometry(
            vertices=self.vertices[self.cells[t]],
            grad_lambda=self.grad_lambda[t],
            volume=float(self.cell_volumes[t]),
            face_areas=self.face_areas[self.cell_faces[t]],
            face_ids=self.cell_faces[t],
            face_signs=self.cell_face_signs[t],
        )


@dataclass(frozen=True)
class BoundarySpec:
    """Geometric predicates on face centroids deciding the boundary split.

    ``traction`` is tested first, then ``clamped``.  A boundary face matching
    neither is an error: every face must end up on exactly one part.
    """

    traction: Optional[Callable[[np.ndarray], bool]] = None
    clamped: Optional[Callable[[np.ndarray], bool]] = None


ALL_CLAMPED = BoundarySpec(clamped=lambda x: True)
ALL_TRACTION = BoundarySpec(traction=lambda x: True)


def _simplex_measure(coords: np.ndarray) -> float:
    # measure of a k-simplex embedded in R^d via the Gram determinant
    edges = coords[1:] - coords[0]
    k = edges.shape[0]
    gram = edges @ edges.T
    return math.sqrt(max(float(np.linalg.det(gram)), 0.0)) / math.factorial(k)


def _cell_geometry_arrays(vertices: np.ndarray, cells: np.ndarray):
    nc, dp1 = cells.shape
    d = dp1 - 1
    M = np.ones((nc, dp1, dp1))
    M[:, :, 1:] = vertices[cells]
    det = np.linalg.det(M)
    if np.any(np.abs(det) < 1e-300):
        raise MeshError("degenerate cell (zero volume)")
    C = np.linalg.inv(M)
    # lambda_k(x) = C[0, k] + C[1:, k] . x, so row k of grad_lambda is C[1:, k]
    grad_lambda = np.transpose(C[:, 1:, :], (0, 2, 1))
    volumes = np.abs(det) / math.factorial(d)
    return grad_lambda, volumes


def _face_table(vertices: np.ndarray, cells: np.ndarray):
    """Enumerate faces with the deterministic global orientation.

    Returns the tuple (faces, face_cells, face_normals, face_areas,
    cell_faces, cell_face_signs).  Faces are sorted lexicographically by
    vertex tuple; T+ is the incident cell with the smaller index and n_e is
    its outward normal (outward for boundary faces).
    """
    nc, dp1 = cells.shape
    d = dp1 - 1
    grad_lambda, _ = _cell_geometry_arrays(vertices, cells)

    incident: dict[tuple, list] = {}
    for t in range(nc):
        cell = cells[t]
        for k in range(dp1):
            fv = tuple(int(v) for j, v in enumerate(cell) if j != k)
            incident.setdefault(fv, []).append((t, k))

    keys = sorted(incident.keys())
    nf = len(keys)
    faces = np.array(keys, dtype=np.int64)
    face_cells = np.full((nf, 2), -1, dtype=np.int64)
    face_normals = np.zeros((nf, d))
    face_areas = np.zeros(nf)
    cell_faces = np.zeros((nc, dp1), dtype=np.int64)
    cell_face_signs = np.zeros((nc, dp1))

    for f, fv in enumerate(keys):
        inc = incident[fv]
        if len(inc) > 2:
            raise MeshError(f"face {fv} shared by {len(inc)} cells (non-manifold)")
        # appended in increasing cell order, so inc[0] is T+
        t_plus, k_plus = inc[0]
        face_cells[f, 0] = t_plus
        if len(inc) == 2:
            face_cells[f, 1] = inc[1][0]
        g = grad_lambda[t_plus, k_plus]
        # lambda_k grows toward vertex k, so the outward normal is -grad
        face_normals[f] = -g / np.linalg.norm(g)
        face_areas[f] = _simplex_measure(vertices[faces[f]])
        for t, k in inc:
            cell_faces[t, k] = f
            cell_face_signs[t, k] = 1.0 if t == t_plus else -1.0

    return faces, face_cells, face_normals, face_areas, cell_faces, cell_face_signs


def mesh_from_arrays(vertices, cells) -> Mesh:
    """Build the full mesh structure from raw coordinate and cell arrays.

    Parameters
    ----------
    vertices : (n_vertices, d) array_like
    cells : (n_cells, d+1) array_like
        Vertex indices per cell, any order; stored sorted.

    Returns
    -------
    Mesh
        With boundary faces tagged FACE_CLAMPED.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.sort(np.asarray(cells, dtype=np.int64), axis=1)
    if vertices.ndim != 2 or cells.ndim != 2:
        raise MeshError("vertices and cells must be 2d arrays")
    d = vertices.shape[1]
    if cells.shape[1] != d + 1:
        raise MeshError(f"cells must have {d + 1} vertices in {d}d")
    if cells.min() < 0 or cells.max() >= vertices.shape[0]:
        raise MeshError("cell vertex index out of range")

    grad_lambda, volumes = _cell_geometry_arrays(vertices, cells)
    faces, face_cells, face_normals, face_areas, cell_faces, cell_face_signs = \
        _face_table(vertices, cells)

    tags = np.full(faces.shape[0], FACE_INTERIOR, dtype=np.int64)
    tags[face_cells[:, 1] < 0] = FACE_CLAMPED

    coords = vertices[cells]                      # (nc, d+1, d)
    diff = coords[:, :, None, :] - coords[:, None, :, :]
    diameters = np.sqrt((diff ** 2).sum(-1)).max(axis=(1, 2))
    surface = face_areas[cell_faces].sum(axis=1)
    inradius = d * volumes / surface
    regularity = diameters / inradius
    worst = float(regularity.max())
    if worst > REGULARITY_WARN:
        warnings.warn(f"shape regularity h/rho = {worst:.1f} exceeds {REGULARITY_WARN}")

    return Mesh(
        d=d, vertices=vertices, cells=cells, faces=faces, face_cells=face_cells,
        face_normals=face_normals, face_areas=face_areas, face_tags=tags,
        cell_faces=cell_faces, cell_face_signs=cell_face_signs,
        grad_lambda=grad_lambda, cell_volumes=volumes, cell_diameters=diameters,
        cell_regularity=regularity,
    )


def enumerate_faces(mesh: Mesh):
    """Recompute the face table from scratch (identical to the stored one)."""
    return _face_table(mesh.vertices, mesh.cells)


def build_structured_unit_square(N: int, diagonal: str = "right-down") -> Mesh:
    """Uniform N x N grid of the unit square split into right triangles.

    Parameters
    ----------
    N : int
        Subdivisions per side, N >= 1.
    diagonal : {"right-down", "right-up"}
        Direction of the square diagonals.  "right-down" splits along the
        (i, j+1)-(i+1, j) diagonal.

    Returns
    -------
    Mesh
        2 N^2 triangles, (N+1)^2 vertices, boundary tagged FACE_CLAMPED.
    """
    if N < 1:
        raise MeshError("N must be a positive integer")
    if diagonal not in ("right-down", "right-up"):
        raise MeshError(f"unknown diagonal direction {diagonal!r}")

    side = np.linspace(0.0, 1.0, N + 1)
    X, Y = np.meshgrid(side, side, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    cells = []
    for j in range(N):
        for i in range(N):
            v00 = j * (N + 1) + i
            v10 = v00 + 1
            v01 = v00 + (N + 1)
            v11 = v01 + 1
            if diagonal == "right-down":
                cells.append((v00, v10, v01))
                cells.append((v10, v11, v01))
            else:
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
    return mesh_from_arrays(vertices, np.array(cells, dtype=np.int64))


def classify_boundary(mesh: Mesh, spec: BoundarySpec) -> Mesh:
    """Tag every boundary face with FACE_TRACTION or FACE_CLAMPED.

    Predicates act on face centroids; a boundary face matching neither
    raises MeshError listing the offenders.
    """
    tags = mesh.face_tags.copy()
    centroids = mesh.face_centroids()
    untagged = []
    for f in mesh.boundary_faces():
        x = centroids[f]
        if spec.traction is not None and spec.traction(x):
            tags[f] = FACE_TRACTION
        elif spec.clamped is not None and spec.clamped(x):
            tags[f] = FACE_CLAMPED
        else:
            untagged.append(int(f))
    if untagged:
        where = ", ".join(str(centroids[f]) for f in untagged[:5])
        raise MeshError(
            f"{len(untagged)} boundary faces matched no predicate (centroids {where})")
    return replace(mesh, face_tags=tags)


def perturb_vertices(mesh: Mesh, amplitude: float, seed: int) -> Mesh:
    """Shift interior vertices by iid uniform offsets in [-amplitude, amplitude]^d.

    Boundary vertices stay put, so connectivity, face numbering and tags all
    carry over unchanged.  Raises MeshError if a cell degenerates.
    """
    rng = np.random.default_rng(seed)
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    on_boundary[mesh.faces[mesh.boundary_faces()].ravel()] = True
    shift = rng.uniform(-amplitude, amplitude, size=mesh.vertices.shape)
    shift[on_boundary] = 0.0
    moved = mesh_from_arrays(mesh.vertices + shift, mesh.cells)
    if moved.cell_volumes.min() < 1e-14 * mesh.cell_volumes.max():
        raise MeshError("perturbation collapsed a cell")
    return replace(moved, face_tags=mesh.face_tags.copy())


def save_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text format: 'dim ncells nverts' header, vertices, cells."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.d} {mesh.n_cells} {mesh.n_vertices}\n")
        for x in mesh.vertices:
            fh.write(" ".join("%.17g" % c for c in x) + "\n")
        for cell in mesh.cells:
            fh.write(" ".join(str(int(v)) for v in cell) + "\n")


def load_mesh(path) -> Mesh:
    """Read a mesh written by :func:`save_mesh` (coordinates round-trip exactly)."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    header = tokens[0].split()
    if len(header) != 3:
        raise MeshError("expected header 'dim ncells nverts'")
    d, ncells, nverts = (int(v) for v in header)
    lines = [ln for ln in tokens[1:] if ln.strip()]
    if len(lines) != nverts + ncells:
        raise MeshError(f"expected {nverts} vertex and {ncells} cell lines")
    vertices = np.array([[float(v) for v in ln.split()] for ln in lines[:nverts]])
    cells = np.array([[int(v) for v in ln.split()] for ln in lines[nverts:]],
                     dtype=np.int64)
    if vertices.shape != (nverts, d) or cells.shape != (ncells, d + 1):
        raise MeshError("malformed vertex or cell line")
    return mesh_from_arrays(vertices, cells)
