"""Discrete elliptic operators on (0,1) with Neumann ends, plus their finite
dimensional limits.

The perturbed operator acts on grid functions as ``u -> -(p u')' + (lam+V) u``,
discretized in flux form with the diffusion sampled at cell midpoints.  That
choice keeps the constant vector an exact eigenvector whenever ``V`` is
constant, which the spectral-gap measurements downstream rely on.

Everything is represented through the mass-symmetrized tridiagonal
``B = W^{1/2} A W^{-1/2}`` (``W`` the quadrature weights), so self-adjointness
with respect to the weighted inner product is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded


def _as_array(f, x):
    """Evaluate a callable or broadcast a constant/array onto points x."""
    if callable(f):
        return np.asarray(f(x), dtype=float) * np.ones_like(x)
    return np.asarray(f, dtype=float) * np.ones_like(x)


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0,1] with composite-trapezoid node weights."""

    n_cells: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def uniform(cls, n_cells: int) -> "Grid":
        if n_cells < 2:
            raise ValueError(f"need at least 2 cells, got {n_cells}")
        nodes = np.linspace(0.0, 1.0, n_cells + 1)
        h = 1.0 / n_cells
        weights = np.full(n_cells + 1, h)
        weights[0] = weights[-1] = h / 2.0
        return cls(n_cells=n_cells, nodes=nodes, weights=weights)

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])


@dataclass(frozen=True)
class Coefficients:
    """Problem coefficients sampled on a grid.

    ``p_mid`` holds the diffusion at cell midpoints, ``v_nodes`` the potential
    at nodes.  ``problem_tag`` records which family produced them.
    """

    p_mid: np.ndarray = field(repr=False)
    v_nodes: np.ndarray = field(repr=False)
    lam: float
    problem_tag: str

    @classmethod
    def from_callables(cls, grid: Grid, p, v, lam: float, problem_tag: str) -> "Coefficients":
        return cls(
            p_mid=_as_array(p, grid.midpoints),
            v_nodes=_as_array(v, grid.nodes),
            lam=float(lam),
            problem_tag=problem_tag,
        )


class OperatorDisc:
    """Discretized self-adjoint positive operator with its two inner products.

    Stores the symmetric tridiagonal ``B = W^{1/2} A W^{-1/2}`` as (diag,
    offdiag) together with the mass weights.  ``grid`` is None for the
    synthetic block fixture, which lives on plain index space.
    """

    def __init__(self, diag, offdiag, weights, epsilon, m0=0.1, grid=None, coefficients=None):
        self.diag = np.asarray(diag, dtype=float)
        self.offdiag = np.asarray(offdiag, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.epsilon = float(epsilon)
        self.m0 = float(m0)
        self.grid = grid
        self.coefficients = coefficients
        if self.diag.shape[0] != self.weights.shape[0]:
            raise ValueError("diag and weights length mismatch")
        if self.offdiag.shape[0] != self.diag.shape[0] - 1:
            raise ValueError("offdiag must have length n-1")
        self._sqrt_w = np.sqrt(self.weights)
        self._banded = None

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    # -- linear algebra -----------------------------------------------------

    def _tridiag_matvec(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 1:
            y = self.diag * x
            y[:-1] += self.offdiag * x[1:]
            y[1:] += self.offdiag * x[:-1]
        else:
            y = self.diag[:, None] * x
            y[:-1] += self.offdiag[:, None] * x[1:]
            y[1:] += self.offdiag[:, None] * x[:-1]
        return y

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Apply the operator: A u."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.n:
            raise ValueError(f"vector length {u.shape[0]} != {self.n}")
        sw = self._sqrt_w if u.ndim == 1 else self._sqrt_w[:, None]
        return self._tridiag_matvec(sw * u) / sw

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Apply the inverse: solve A u = g by a banded Cholesky solve."""
        g = np.asarray(g, dtype=float)
        if g.shape[0] != self.n:
            raise ValueError(f"vector length {g.shape[0]} != {self.n}")
        if self._banded is None:
            ab = np.zeros((2, self.n))
            ab[0, 1:] = self.offdiag
            ab[1] = self.diag
            self._banded = ab
        sw = self._sqrt_w if g.ndim == 1 else self._sqrt_w[:, None]
        try:
            y = solveh_banded(self._banded, sw * g)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"operator not positive definite: {exc}") from exc
        return y / sw

    # -- inner products ------------------------------------------------------

    def l2_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return l2_inner(self, u, v)

    def energy_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return energy_inner(self, u, v)

    def l2_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.l2_inner(u, u), 0.0)))

    def energy_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.energy_inner(u, u), 0.0)))

    def energy_norms(self, U: np.ndarray) -> np.ndarray:
        """Energy norms of the columns of U."""
        X = self._sqrt_w[:, None] * U
        q = np.einsum("ij,ij->j", X, self._tridiag_matvec(X))
        return np.sqrt(np.maximum(q, 0.0))


def l2_inner(op_or_grid, u, v) -> float:
    """Weighted L2 inner product (composite trapezoid on a Grid)."""
    w = op_or_grid.weights
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.shape[0] != w.shape[0]:
        raise ValueError("dimension mismatch in l2_inner")
    return float(np.dot(w * u, v))


def energy_inner(op: OperatorDisc, u, v) -> float:
    """Inner product of the square-root power space, <A u, v>_{L2}.

    Computed through the symmetrized tridiagonal, so it agrees with the
    quadrature of p|u'|^2 + (lam+V)|u|^2 exactly.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.shape[0] != op.n:
        raise ValueError("dimension mismatch in energy_inner")
    x = op._sqrt_w * u
    return float(np.dot(op._tridiag_matvec(x), op._sqrt_w * v))


def assemble(grid: Grid, coeff: Coefficients, m0: float = 0.1, epsilon: float = 1.0) -> OperatorDisc:
    """Assemble the flux-form discretization of -(p u')' + (lam+V) u.

    Neumann ends; p at midpoints, V at nodes.  Rejects coefficient sets that
    break positivity, naming the first offending location.
    """
    p = coeff.p_mid
    v = coeff.v_nodes
    if p.shape[0] != grid.n_cells or v.shape[0] != grid.n_nodes:
        raise ValueError("coefficient arrays do not match the grid")
    if np.any(p <= 0.0):
        i = int(np.argmin(p))
        raise ValueError(
            f"diffusion must be positive; p={p[i]:.3e} at midpoint x={grid.midpoints[i]:.6f}"
        )
    zeroth = coeff.lam + v
    if np.min(zeroth) < m0:
        i = int(np.argmin(zeroth))
        raise ValueError(
            f"lam+V must be >= m0={m0}; got {zeroth[i]:.3e} at node x={grid.nodes[i]:.6f}"
        )
    h = grid.h
    w = grid.weights
    n = grid.n_nodes
    # stiffness of the gradient form: K 1 = 0 exactly
    kdiag = np.zeros(n)
    kdiag[:-1] += p / h
    kdiag[1:] += p / h
    koff = -p / h
    diag = kdiag / w + zeroth
    offdiag = koff / np.sqrt(w[:-1] * w[1:])
    return OperatorDisc(
        diag=diag,
        offdiag=offdiag,
        weights=w,
        epsilon=epsilon,
        m0=m0,
        grid=grid,
        coefficients=coeff,
    )


class LimitOperator:
    """The limiting finite-dimensional operator with its weighted inner product."""

    def __init__(self, matrix, weights, problem_tag=""):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.weights = np.asarray(weights, dtype=float)
        self.problem_tag = problem_tag
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or self.weights.shape != (n,):
            raise ValueError("matrix/weights shape mismatch")
        wm = self.weights[:, None] * self.matrix
        if not np.allclose(wm, wm.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(wm).max())):
            raise ValueError("limit matrix is not symmetric under the limit weights")
        self._eig = None

    @property
    def n_dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(u, dtype=float)

    def solve(self, g: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.matrix, np.asarray(g, dtype=float))

    def l2_inner(self, u, v) -> float:
        return float(np.dot(self.weights * np.asarray(u, float), np.asarray(v, float)))

    def l2_norm(self, u) -> float:
        return float(np.sqrt(max(self.l2_inner(u, u), 0.0)))

    def eigenpairs(self):
        """Ascending eigenvalues and weight-orthonormal eigenvectors (columns)."""
        if self._eig is None:
            sw = np.sqrt(self.weights)
            sym = sw[:, None] * self.matrix / sw[None, :]
            vals, vecs = np.linalg.eigh(0.5 * (sym + sym.T))
            vecs = vecs / sw[:, None]
            for j in range(vecs.shape[1]):
                col = vecs[:, j]
                nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
                if nz.size and col[nz[0]] < 0:
                    vecs[:, j] = -col
            self._eig = (vals, vecs)
        return self._eig

    def min_eigenvalue(self) -> float:
        return float(self.eigenpairs()[0][0])


def limit_operator(problem_tag: str, params: dict) -> LimitOperator:
    """Build the limiting operator for a problem family.

    homogenization: scalar lam+V0.  localized: the 2x2 compartment matrix with
    weights (x1, 1-x1).  synthetic: matrix and weights passed through.
    """
    if problem_tag == "homogenization":
        lam, v0 = float(params["lam"]), float(params["V0"])
        if lam + v0 <= 0:
            raise ValueError(f"lam+V0 must be positive, got {lam + v0}")
        return LimitOperator([[lam + v0]], [1.0], problem_tag)
    if problem_tag == "localized":
        lam = float(params["lam"])
        a1 = float(params["a1"])
        l1 = float(params["l1"])
        x1 = float(params["x1"])
        if not 0.0 < x1 < 1.0:
            raise ValueError(f"x1 must lie in (0,1), got {x1}")
        if a1 < 0 or l1 <= 0:
            raise ValueError(f"need a1 >= 0 and l1 > 0, got a1={a1}, l1={l1}")
        c = a1 / (2.0 * l1)
        mat = [
            [c / x1 + lam, -c / x1],
            [-c / (1.0 - x1), c / (1.0 - x1) + lam],
        ]
        return LimitOperator(mat, [x1, 1.0 - x1], problem_tag)
    if problem_tag == "synthetic":
        return LimitOperator(params["matrix"], params["weights"], problem_tag)
    raise ValueError(f"unknown problem_tag {problem_tag!r}")
