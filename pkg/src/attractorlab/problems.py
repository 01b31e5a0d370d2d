"""The three concrete problem families the laboratory sweeps.

homogenization: uniformly large diffusion 1/eps with a potential drifting to a
constant; the limit is a scalar ODE.

localized: diffusion large everywhere except a small window around an interior
point where it drops to eps-scale; the limit is the 2x2 compartment ODE.

synthetic: a block operator diag(limit, huge tail) with exact inclusion and
projection couplings; every gap the laboratory measures vanishes identically,
which makes it the zero oracle for the whole pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import Coefficients, Grid, LimitOperator, OperatorDisc, assemble, limit_operator


@dataclass(frozen=True)
class ProblemSetup:
    """Everything a sweep needs at one value of the perturbation parameter."""

    problem_tag: str
    epsilon: float
    op: OperatorDisc
    limit: LimitOperator
    n_keep: int
    params: dict = field(repr=False)


def homogenization_setup(
    epsilon: float,
    n_cells: int = 2000,
    lam: float = 1.0,
    v0: float = -0.5,
    v_drift: float = 0.5,
    v_ripple: float = 1.0,
    m0: float = 0.1,
) -> ProblemSetup:
    """Large-diffusion family: p = 1/eps, V = V0 + v_drift sqrt(eps) + v_ripple eps sin(2 pi x).

    The sqrt(eps) mean drift keeps the measured potential rate at the same
    order as the smoothing term p(eps)^{-1/2}, so equilibrium and attractor
    distances decay at the square-root rate the sweep fits.  v_drift=0 gives
    the pure ripple family.
    """
    grid = Grid.uniform(n_cells)
    drift = v_drift * np.sqrt(epsilon)

    def v_fun(x):
        return v0 + drift + v_ripple * epsilon * np.sin(2.0 * np.pi * x)

    coeff = Coefficients.from_callables(grid, 1.0 / epsilon, v_fun, lam, "homogenization")
    op = assemble(grid, coeff, m0=m0, epsilon=epsilon)
    lim = limit_operator("homogenization", {"lam": lam, "V0": v0})
    return ProblemSetup(
        "homogenization",
        epsilon,
        op,
        lim,
        n_keep=1,
        params={"lam": lam, "V0": v0, "v_drift": v_drift, "v_ripple": v_ripple},
    )


def localized_diffusion_profile(epsilon, a1=1.0, l1=1.0, x1=0.5, outer=1.0, widen=1.0):
    """Diffusion profile: eps*a1' on the inner window, outer/eps far away,
    monotone cubic joins on the two gap annuli.

    a1' = a1 (1 + widen*eps) and l1' = l1 (1 + widen*eps), so the window and
    floor approach their limits from above at linear order.
    """
    a1p = a1 * (1.0 + widen * epsilon)
    l1p = l1 * (1.0 + widen * epsilon)
    lo_in, hi_in = x1 - epsilon * l1, x1 + epsilon * l1
    lo_out, hi_out = x1 - epsilon * l1p, x1 + epsilon * l1p
    p_in = epsilon * a1p
    p_out = outer / epsilon

    def smoothstep(t):
        t = np.clip(t, 0.0, 1.0)
        return 3.0 * t**2 - 2.0 * t**3

    def p_fun(x):
        x = np.asarray(x, dtype=float)
        p = np.full_like(x, p_out)
        inner = (x >= lo_in) & (x <= hi_in)
        p[inner] = p_in
        left = (x >= lo_out) & (x < lo_in)
        t = (x[left] - lo_out) / max(lo_in - lo_out, 1e-300)
        p[left] = p_out + (p_in - p_out) * smoothstep(t)
        right = (x > hi_in) & (x <= hi_out)
        t = (hi_out - x[right]) / max(hi_out - hi_in, 1e-300)
        p[right] = p_out + (p_in - p_out) * smoothstep(t)
        return p

    return p_fun, {"a1p": a1p, "l1p": l1p, "lo_in": lo_in, "hi_in": hi_in}


def localized_setup(
    epsilon: float,
    n_cells: int = 2000,
    lam: float = 0.1,
    a1: float = 1.0,
    l1: float = 1.0,
    x1: float = 0.5,
    outer: float = 1.0,
    widen: float = 1.0,
    m0: float = 0.1,
) -> ProblemSetup:
    """Localized small-diffusion family with the 2x2 compartment limit."""
    if lam < m0:
        raise ValueError(f"lam={lam} below m0={m0}")
    grid = Grid.uniform(n_cells)
    p_fun, prof = localized_diffusion_profile(epsilon, a1, l1, x1, outer, widen)
    if (prof["hi_in"] - prof["lo_in"]) / grid.h < 8:
        need = int(np.ceil(8.0 / (2.0 * epsilon * l1)))
        raise ValueError(
            f"grid does not resolve the diffusion window: need n_cells >= {need}, got {n_cells}"
        )
    coeff = Coefficients.from_callables(grid, p_fun, 0.0, lam, "localized")
    op = assemble(grid, coeff, m0=m0, epsilon=epsilon)
    lim = limit_operator("localized", {"lam": lam, "a1": a1, "l1": l1, "x1": x1})
    return ProblemSetup(
        "localized",
        epsilon,
        op,
        lim,
        n_keep=2,
        params={"lam": lam, "a1": a1, "l1": l1, "x1": x1, "outer": outer, "widen": widen},
    )


def synthetic_setup(
    epsilon: float,
    n_dim: int = 2,
    tail_dim: int = 16,
    tail_scale: float = 1e18,
    m0: float = 0.1,
) -> ProblemSetup:
    """Block fixture diag(limit block, tail_scale/eps tail) on index space.

    The tail eigenvalues are astronomically large, so every coupling gap is
    zero to well below 1e-8; the low block is the limit operator verbatim.
    """
    if n_dim == 1:
        block = np.array([[0.5]])
    elif n_dim == 2:
        block = np.array([[1.5, -1.0], [-1.0, 1.5]])
    else:
        raise ValueError("the synthetic fixture supports n_dim in {1, 2}")
    tail = (tail_scale / epsilon) * (1.0 + np.arange(tail_dim) / (2.0 * tail_dim))
    n = n_dim + tail_dim
    diag = np.concatenate([np.diag(block), tail])
    offdiag = np.zeros(n - 1)
    if n_dim == 2:
        offdiag[0] = block[0, 1]
    op = OperatorDisc(
        diag=diag,
        offdiag=offdiag,
        weights=np.ones(n),
        epsilon=epsilon,
        m0=m0,
        grid=None,
        coefficients=None,
    )
    lim = LimitOperator(block, np.ones(n_dim), "synthetic")
    return ProblemSetup(
        "synthetic",
        epsilon,
        op,
        lim,
        n_keep=n_dim,
        params={"n_dim": n_dim, "tail_dim": tail_dim, "tail_scale": tail_scale},
    )


def build_setup(problem_tag: str, epsilon: float, n_cells: int, params: dict) -> ProblemSetup:
    params = dict(params)
    if problem_tag == "homogenization":
        return homogenization_setup(epsilon, n_cells=n_cells, **params)
    if problem_tag == "localized":
        return localized_setup(epsilon, n_cells=n_cells, **params)
    if problem_tag == "synthetic":
        return synthetic_setup(epsilon, **params)
    raise ValueError(f"unknown problem_tag {problem_tag!r}")
