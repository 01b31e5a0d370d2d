"""Scalar reaction terms acting pointwise (Nemitskii maps).

The default is the bistable cubic clamped to a constant outside a cutoff
radius through a C^1 blend, so the map is globally bounded and Lipschitz while
keeping the three hyperbolic equilibria of the open-loop cubic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FSpec:
    """A C^1 scalar function with the bounds the manifold machinery needs."""

    name: str
    fun: callable = field(repr=False)
    deriv: callable = field(repr=False)
    bound: float
    lipschitz: float
    cutoff_radius: float

    def __call__(self, u):
        return self.fun(u)

    def local_lipschitz(self, radius: float) -> float:
        """Max |f'| on [-radius, radius], sampled densely."""
        r = min(radius, self.cutoff_radius * 2.0)
        u = np.linspace(-r, r, 4001)
        return float(np.max(np.abs(self.deriv(u))))


def cutoff_cubic(cutoff_radius: float = 4.0, blend_width: float | None = None) -> FSpec:
    """u - u^3 clamped to constants outside |u| <= cutoff_radius (C^1 blend).

    Outside the blend zone the value freezes at g(R) + g'(R) w/2, so the sign
    condition f(u)·sign(u) < 0 holds for large |u| and the flow is dissipative.
    """
    r = float(cutoff_radius)
    if r <= 1.0:
        raise ValueError("cutoff radius must exceed the outer equilibria (need > 1)")
    w = float(blend_width) if blend_width is not None else 0.25 * r
    g_r = r - r**3
    dg_r = 1.0 - 3.0 * r**2

    def fun(u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        s = np.sign(u)
        core = u - u**3
        theta = np.clip((a - r) / w, 0.0, 1.0)
        blend = g_r + dg_r * w * (theta - 0.5 * theta**2)
        out = np.where(a <= r, core, s * blend)
        return out if out.ndim else float(out)

    def deriv(u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        core = 1.0 - 3.0 * u**2
        theta = np.clip((a - r) / w, 0.0, 1.0)
        out = np.where(a <= r, core, dg_r * (1.0 - theta))
        return out if out.ndim else float(out)

    bound = abs(g_r + dg_r * w * 0.5)
    lip = max(1.0, 3.0 * r**2 - 1.0)
    return FSpec(
        name=f"cutoff_cubic(R={r:g})",
        fun=fun,
        deriv=deriv,
        bound=bound,
        lipschitz=lip,
        cutoff_radius=r,
    )


def zero_fspec() -> FSpec:
    return FSpec(
        name="zero",
        fun=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        deriv=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        bound=0.0,
        lipschitz=0.0,
        cutoff_radius=np.inf,
    )
