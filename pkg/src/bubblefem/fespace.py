"""Discrete spaces on simplicial meshes: vector P1, face bubbles, RT0, P0.

Provides simplex quadrature, degree-of-freedom layouts with essential-dof
masks, pointwise basis evaluation and the interpolation operators the error
norms are built on.  Field callables are vectorized: they take an (m, d)
array of points and return (m, d) or (m,) values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import FACE_CLAMPED, CellGeometry, Mesh

MAX_QUAD_DEGREE = 6


@dataclass(frozen=True)
class QuadratureRule:
    """Points (barycentric) and weights on the reference simplex.

    Weights sum to 1, so integrals are measure * sum(w_q f(x_q)).  ``degree``
    is the actual exactness degree: every barycentric monomial up to it is
    integrated exactly, and for the hard-coded 2d rules the degree is sharp.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


def integrate_barycentric_powers(beta, volume: float) -> float:
    """Exact integral of prod_k lambda_k^beta_k over a simplex of given measure."""
    beta = [int(b) for b in beta]
    d = len(beta) - 1
    num = math.prod(math.factorial(b) for b in beta) * math.factorial(d)
    return volume * num / math.factorial(sum(beta) + d)


def bubble_mass_coefficient(d: int) -> float:
    """(1/|T|) integral of phi_e^2 over any d-cell: d! 2^d / (3d)!."""
    return math.factorial(d) * 2 ** d / math.factorial(3 * d)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _grundmann_moeller(dim: int, s: int):
    # conical product rule of degree 2s+1 on the dim-simplex; weights come out
    # scaled for the unit-volume reference, so multiply by dim! at the end
    degree = 2 * s + 1
    points, weights = [], []
    for i in range(s + 1):
        denom = dim + degree - 2 * i
        coeff = ((-1) ** i * 2.0 ** (-2 * s) * float(denom) ** degree
                 / (math.factorial(i) * math.factorial(dim + degree - i)))
        for beta in _compositions(s - i, dim + 1):
            points.append([(2 * b + 1) / denom for b in beta])
            weights.append(coeff)
    return (np.array(points, dtype=float),
            np.array(weights) * math.factorial(dim),
            degree)


def quadrature(degree: int, dim: int = 2) -> QuadratureRule:
    """Simplex rule exact at least to ``degree``.

    2d requests of degree 1 and 2 return the centroid and edge-midpoint
    rules (the latter is sharp: it misintegrates cubics).  Everything else
    is a Grundmann-Moller rule of odd degree >= the request; the returned
    ``degree`` field always states the actual exactness.
    """
    if degree < 1 or degree > MAX_QUAD_DEGREE:
        raise ValueError(f"quadrature degree {degree} unsupported (1..{MAX_QUAD_DEGREE})")
    if dim == 2 and degree == 1:
        return QuadratureRule(np.array([[1, 1, 1]]) / 3.0, np.array([1.0]), 1)
    if dim == 2 and degree == 2:
        points = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        return QuadratureRule(points, np.full(3, 1.0 / 3.0), 2)
    points, weights, actual = _grundmann_moeller(dim, degree // 2)
    return QuadratureRule(points, weights, actual)


@dataclass(frozen=True)
class DofLayout:
    """Numbering of the four unknown families with essential-dof masks.

    P1 vector dofs are interleaved (dof = d*vertex + component) over all
    vertices; ``u_free`` masks out the vertices of clamped faces.  Bubble
    dofs live on interior and traction faces only (``bubble_faces`` in face
    order, ``face_to_bubble`` inverse with -1 elsewhere).  RT0 dofs span all
    faces and ``w_free`` masks the clamped ones (zero normal flux).  The
    pressure dofs are the cells.
    """

    d: int
    n_l: int
    u_free: np.ndarray
    bubble_faces: np.ndarray
    face_to_bubble: np.ndarray
    n_b: int
    w_free: np.ndarray
    n_w: int
    n_p: int


def build_dof_layout(mesh: Mesh, enrich: bool = True) -> DofLayout:
    """Layout for the enriched pair; ``enrich=False`` drops every bubble dof
    (the plain, unstable pair used as the experimental baseline)."""
    clamped = mesh.face_tags == FACE_CLAMPED
    fixed_vertices = np.zeros(mesh.n_vertices, dtype=bool)
    fixed_vertices[mesh.faces[clamped].ravel()] = True
    u_free = np.repeat(~fixed_vertices, mesh.d)
    bubble_faces = np.flatnonzero(~clamped) if enrich \
        else np.zeros(0, dtype=np.int64)
    face_to_bubble = np.full(mesh.n_faces, -1, dtype=np.int64)
    face_to_bubble[bubble_faces] = np.arange(bubble_faces.size)
    w_free = ~clamped
    return DofLayout(
        d=mesh.d, n_l=mesh.d * mesh.n_vertices, u_free=u_free,
        bubble_faces=bubble_faces, face_to_bubble=face_to_bubble,
        n_b=int(bubble_faces.size), w_free=w_free, n_w=int(w_free.sum()),
        n_p=mesh.n_cells,
    )


def _local_face(cell: CellGeometry, face: int) -> int:
    hits = np.flatnonzero(cell.face_ids == face)
    if hits.size == 0:
        raise ValueError(f"face {face} is not on this cell")
    return int(hits[0])


def eval_p1_basis(cell: CellGeometry, point):
    """Values and (constant) gradients of the d+1 scalar hats.

    ``point`` is barycentric; the values are just its coordinates.
    """
    return np.asarray(point, dtype=float), cell.grad_lambda


def eval_bubble(cell: CellGeometry, face: int, point):
    """Scalar bubble phi_e and its gradient at a barycentric point.

    phi_e is the product of the d barycentric coordinates of the vertices
    spanning the face, so it vanishes on every other face and at all
    vertices.  Raises ValueError if the face is not on the cell.
    """
    k = _local_face(cell, face)
    lam = np.asarray(point, dtype=float)
    idx = [m for m in range(lam.size) if m != k]
    phi = float(np.prod(lam[idx]))
    grad = np.zeros(cell.grad_lambda.shape[1])
    for m in idx:
        partial = math.prod(float(lam[j]) for j in idx if j != m)
        grad = grad + partial * cell.grad_lambda[m]
    return phi, grad


def eval_rt0_basis(cell: CellGeometry, face: int, x):
    """RT0 basis of a face dof at a physical point, plus its divergence.

    Normalized so the mean normal flux through the face along the global
    n_e is 1 and zero through every other face.
    """
    k = _local_face(cell, face)
    d = cell.grad_lambda.shape[1]
    scale = cell.face_signs[k] * cell.face_areas[k] / (d * cell.volume)
    value = scale * (np.asarray(x, dtype=float) - cell.vertices[k])
    return value, scale * d


def interpolate_p1(u_exact, mesh: Mesh, layout: DofLayout | None = None) -> np.ndarray:
    """Vertex interpolant of a vector field, flattened as d*vertex + component."""
    vals = np.asarray(u_exact(mesh.vertices), dtype=float).ravel().copy()
    if layout is not None:
        vals[~layout.u_free] = 0.0
    return vals


def interpolate_p0(p_exact, mesh: Mesh, degree: int | None = None) -> np.ndarray:
    """Cell means of a scalar field (the L2 projection onto constants)."""
    rule = quadrature(2 * mesh.d if degree is None else degree, mesh.d)
    coeffs = np.zeros(mesh.n_cells)
    for t in range(mesh.n_cells):
        xq = rule.points @ mesh.vertices[mesh.cells[t]]
        coeffs[t] = rule.weights @ np.asarray(p_exact(xq), dtype=float)
    return coeffs


def interpolate_rt0(w_exact, mesh: Mesh, degree: int = 5) -> np.ndarray:
    """Per-face mean normal flux of a vector field (the RT0 dof values)."""
    rule = quadrature(degree, mesh.d - 1)
    dofs = np.zeros(mesh.n_faces)
    for f in range(mesh.n_faces):
        xq = rule.points @ mesh.vertices[mesh.faces[f]]
        dofs[f] = rule.weights @ (np.asarray(w_exact(xq)) @ mesh.face_normals[f])
    return dofs


def canonical_bubble_dof(v, mesh: Mesh, face: int) -> float:
    """Face mean of n_e . (v - Pi_1 v); the bubble dof functional (test use only)."""
    fverts = mesh.vertices[mesh.faces[face]]
    rule = quadrature(5, mesh.d - 1)
    xq = rule.points @ fverts
    vq = np.asarray(v(xq), dtype=float)
    vlin = rule.points @ np.asarray(v(fverts), dtype=float)
    return float(rule.weights @ ((vq - vlin) @ mesh.face_normals[face]))
