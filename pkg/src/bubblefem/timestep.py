"""Backward-Euler driver for the transient consolidation system.

A step solves the assembled one-step system with the memory contribution
of the previous state added to the (negated) pressure row.  The matrix is
factored on first use and the factor lives on the system, so repeated
steps and repeated trajectories reuse it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .assembly import BlockSystem, MaterialParams, recover_bubbles
from .fespace import (
    DofLayout,
    canonical_bubble_dof,
    integrate_barycentric_powers,
    interpolate_p0,
    interpolate_p1,
    interpolate_rt0,
)
from .mesh import Mesh
from .solver import DirectFactor, SolverError


@dataclass(frozen=True)
class BiotState:
    """Reduced coefficient vectors of one time level, tagged with time."""

    U_b: np.ndarray
    U_l: np.ndarray
    W: np.ndarray
    P: np.ndarray
    t: float

    def __post_init__(self):
        for name in ("U_b", "U_l", "W", "P"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))


def initial_state(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                  mode: str = "zero-storage",
                  u_exact: Optional[Callable] = None,
                  p_exact: Optional[Callable] = None,
                  w_exact: Optional[Callable] = None) -> BiotState:
    """State at t = 0.

    "zero-storage" starts from u = 0, p = 0, which satisfies the initial
    storage condition (1/M) p + alpha div u = 0 identically.
    "interpolate-exact" interpolates the given fields into the discrete
    spaces: vertex values for the linear displacement part, cell means for
    pressure, face fluxes for w when w_exact is given.  On an enriched
    layout the bubble coefficients are scaled so the interpolant keeps the
    exact flux through each bubble face; the face-mean dof is divided by
    the face mean of the bubble, making div of the interpolant reproduce
    the cell means of div u exactly.
    """
    n_lf = int(layout.u_free.sum())
    if mode == "zero-storage":
        return BiotState(np.zeros(layout.n_b), np.zeros(n_lf),
                         np.zeros(layout.n_w), np.zeros(layout.n_p), 0.0)
    if mode == "interpolate-exact":
        if u_exact is None or p_exact is None:
            raise ValueError("interpolate-exact needs u_exact and p_exact")
        U_l = interpolate_p1(u_exact, mesh, layout)[layout.u_free]
        U_b = np.zeros(layout.n_b)
        if layout.n_b:
            mean_phi = integrate_barycentric_powers((1,) * mesh.d, 1.0)
            for b, face in enumerate(layout.bubble_faces):
                U_b[b] = canonical_bubble_dof(u_exact, mesh, face) / mean_phi
        P = interpolate_p0(p_exact, mesh)
        W = np.zeros(layout.n_w)
        if w_exact is not None:
            W = interpolate_rt0(w_exact, mesh)[layout.w_free]
        return BiotState(U_b, U_l, W, P, 0.0)
    raise ValueError(f"unknown initial mode {mode!r}")


def initial_memory(mesh: Mesh, params: MaterialParams, layout: DofLayout,
                   p0: Callable, div_u0: Optional[Callable] = None,
                   degree: Optional[int] = None) -> np.ndarray:
    """Storage functional of prescribed initial data, for the first step.

    Backward Euler from t = 0 integrates the given initial condition, not
    its interpolant, so the first right-hand side carries the cell moments
    -(1/M)(p0, q) - alpha (div u0, q) of the exact fields.  Later steps
    take the same functional algebraically from the previous state.
    """
    mem = -(mesh.cell_volumes / params.M) * interpolate_p0(p0, mesh, degree)
    if div_u0 is not None:
        mem -= params.alpha * mesh.cell_volumes \
            * interpolate_p0(div_u0, mesh, degree)
    return mem


def _memory_rhs(system: BlockSystem, state: BiotState) -> np.ndarray:
    # previous-state storage, entering the negated pressure row:
    # -(1/M p^{m-1}, q) - (alpha div u^{m-1}, q)
    blocks = system.blocks
    mem = -(blocks["M_p"] @ state.P) + blocks["G_l"].T @ state.U_l
    if system.layout.n_b:
        mem += blocks["G_b"].T @ state.U_b
    return mem


def step(state: BiotState, system: BlockSystem, tau: Optional[float] = None,
         memory: Optional[np.ndarray] = None) -> BiotState:
    """Advance one backward-Euler step of length system.tau.

    memory overrides the storage functional of the previous level (used
    for the first step when the initial data are known in closed form and
    their moments should not pass through the interpolant).
    """
    if tau is not None and tau != system.tau:
        raise ValueError(
            f"tau {tau} does not match the assembled system (tau={system.tau})")
    rhs = system.rhs_static.copy()
    rhs[system.slices["p"]] += _memory_rhs(system, state) if memory is None \
        else memory
    if system.factor is None:
        system.factor = DirectFactor(system.matrix)
    m = int(round(state.t / system.tau)) + 1
    try:
        x = system.factor.solve(rhs)
    except SolverError as exc:
        raise SolverError(f"step {m} (t = {state.t + system.tau:g}): {exc}") from exc

    U_l = x[system.slices["l"]]
    W = x[system.slices["w"]]
    P = x[system.slices["p"]]
    if system.variant == "diagonal-condensed":
        U_b = recover_bubbles(system, U_l, P)
    else:
        U_b = x[system.slices["b"]] if system.layout.n_b else np.zeros(0)
    return BiotState(U_b, U_l, W, P, state.t + system.tau)


def save_state(state: BiotState, path) -> Path:
    """Checkpoint the coefficient vectors as dof,value CSV rows.

    Families are stacked in solver order (bubble, linear, flux, pressure)
    under one global dof index; header comments record the time level and
    the family offsets so the vectors can be split again.
    """
    parts = (("b", state.U_b), ("l", state.U_l),
             ("w", state.W), ("p", state.P))
    lines = ["# t=%.17g" % state.t]
    offset = 0
    for name, arr in parts:
        lines.append(f"# {name}: offset={offset} size={arr.size}")
        offset += arr.size
    lines.append("dof,value")
    values = np.concatenate([arr for _, arr in parts])
    lines += ["%d,%.17g" % (i, v) for i, v in enumerate(values)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
