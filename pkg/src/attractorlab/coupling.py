"""Lift/average pairs between the limit space and the grid, and the measured
rate functions: resolvent gap, nonlinearity gap, projection gap, and the norm
non-equivalence ratio.

Operator norms with a finite-dimensional domain side are computed exactly by
Gram reduction.  Norms with the grid space as domain are estimated by probe
maximization (random plus leading spectral probes) refined by adjoint power
iteration, which converges to the true norm; a dense SVD oracle is available
as a slow cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import Grid, LimitOperator, OperatorDisc
from .spectral import SpectralSplit, eigendecompose


@dataclass(frozen=True)
class CouplingPair:
    """Lift into the grid space and average back; average o lift = identity."""

    lift_matrix: np.ndarray = field(repr=False)
    average_matrix: np.ndarray = field(repr=False)
    limit_weights: np.ndarray = field(repr=False)
    problem_tag: str

    @property
    def n_dim(self) -> int:
        return self.lift_matrix.shape[1]

    def lift(self, x):
        return self.lift_matrix @ np.asarray(x, dtype=float)

    def average(self, u):
        return self.average_matrix @ np.asarray(u, dtype=float)

    def roundtrip_defect(self) -> float:
        me = self.average_matrix @ self.lift_matrix
        return float(np.abs(me - np.eye(self.n_dim)).max())

    def limit_basis(self) -> np.ndarray:
        """Columns orthonormal for the limit weights."""
        return np.diag(1.0 / np.sqrt(self.limit_weights))


def make_coupling(problem_tag: str, grid: Grid | None, params: dict) -> CouplingPair:
    """Build the coupling pair for a family.

    homogenization: lift constants, average over the whole interval.
    localized: piecewise-linear lift across the diffusion window, one-sided
    averages outside it; the window ends are snapped to grid nodes so the
    identity average o lift is exact.
    synthetic: inclusion and projection on index space.
    """
    if problem_tag == "homogenization":
        n = grid.n_nodes
        e = np.ones((n, 1))
        m = grid.weights.reshape(1, n).copy()
        return CouplingPair(e, m, np.array([1.0]), problem_tag)

    if problem_tag == "localized":
        x1 = float(params["x1"])
        l1 = float(params["l1"])
        eps = float(params["epsilon"])
        h = grid.h
        il = int(round((x1 - eps * l1) / h))
        ir = int(round((x1 + eps * l1) / h))
        if ir - il < 8:
            need = int(np.ceil(8.0 / (2.0 * eps * l1)))
            raise ValueError(f"transition under-resolved: need n_cells >= {need}")
        if il < 1 or ir > grid.n_cells - 1:
            raise ValueError("diffusion window touches the boundary")
        x = grid.nodes
        xl, xr = x[il], x[ir]
        e = np.zeros((grid.n_nodes, 2))
        ramp = np.clip((x - xl) / (xr - xl), 0.0, 1.0)
        e[:, 0] = 1.0 - ramp
        e[:, 1] = ramp
        m = np.zeros((2, grid.n_nodes))
        wl = np.full(il + 1, h)
        wl[0] = wl[-1] = h / 2.0
        m[0, : il + 1] = wl / xl
        wr = np.full(grid.n_nodes - ir, h)
        wr[0] = wr[-1] = h / 2.0
        m[1, ir:] = wr / (1.0 - xr)
        return CouplingPair(e, m, np.array([x1, 1.0 - x1]), problem_tag)

    if problem_tag == "synthetic":
        n_dim = int(params["n_dim"])
        n_total = int(params["n_total"])
        e = np.zeros((n_total, n_dim))
        e[:n_dim, :n_dim] = np.eye(n_dim)
        m = e.T.copy()
        return CouplingPair(e, m, np.ones(n_dim), problem_tag)

    raise ValueError(f"unknown problem_tag {problem_tag!r}")


def coupling_norms(op: OperatorDisc, limit_op: LimitOperator, pair: CouplingPair) -> dict:
    """Exact operator norms of the pair in the four spec directions."""
    b = pair.limit_basis()
    eb = pair.lift_matrix @ b
    # lift norms by Gram reduction on the domain side
    g_l2 = np.array([[op.l2_inner(eb[:, i], eb[:, j]) for j in range(pair.n_dim)] for i in range(pair.n_dim)])
    g_en = np.array(
        [[op.energy_inner(eb[:, i], eb[:, j]) for j in range(pair.n_dim)] for i in range(pair.n_dim)]
    )
    w0 = pair.limit_weights
    mt = pair.average_matrix.T
    # average norms through the n x n matrices M W^{-1} M^T W0 and M S^{-1} M^T W0
    minv = pair.average_matrix @ (mt / op.weights[:, None])
    a_l2 = np.sqrt(max(np.linalg.eigvalsh(np.sqrt(w0)[:, None] * minv * np.sqrt(w0)[None, :]).max(), 0.0))
    sinv_mt = op.solve(mt / op.weights[:, None])
    msm = pair.average_matrix @ sinv_mt
    a_en = np.sqrt(max(np.linalg.eigvalsh(np.sqrt(w0)[:, None] * msm * np.sqrt(w0)[None, :]).max(), 0.0))
    return {
        "lift_l2": float(np.sqrt(max(np.linalg.eigvalsh(g_l2).max(), 0.0))),
        "lift_energy": float(np.sqrt(max(np.linalg.eigvalsh(g_en).max(), 0.0))),
        "average_l2": float(a_l2),
        "average_energy": float(a_en),
    }


def _gap_apply(op, limit_op, pair, g):
    """Apply A^{-1} - lift A0^{-1} average to columns g."""
    return op.solve(g) - pair.lift_matrix @ limit_op.solve(pair.average(g))


def _gap_adjoint(op, limit_op, pair, h):
    """L2 adjoint of the gap operator applied to an energy-space element."""
    ah = op.apply(h)
    estar = (pair.lift_matrix.T @ (op.weights * ah)) / pair.limit_weights
    mstar = (pair.average_matrix.T @ (pair.limit_weights * limit_op.solve(estar))) / op.weights
    return h - mstar


def resolvent_gap(
    op: OperatorDisc,
    limit_op: LimitOperator,
    pair: CouplingPair,
    sd=None,
    n_random: int = 64,
    n_spectral: int = 16,
    rng=None,
    refine: bool = True,
    tol: float = 1e-4,
    max_iter: int = 80,
):
    """Measured resolvent gap, L2 -> energy norm.

    Probe maximization over unit-L2 random fields and leading eigenvectors,
    then adjoint power iteration from the best probe so the estimate converges
    to the operator norm instead of staying a loose lower bound.
    Returns (value, info).
    """
    rng = np.random.default_rng(rng)
    n = op.n
    probes = rng.standard_normal((n, n_random))
    if sd is None:
        sd = eigendecompose(op, k=min(n_spectral, n))
    k = min(n_spectral, sd.k)
    probes = np.hstack([probes, sd.eigenvectors[:, :k]])
    norms = np.sqrt(np.einsum("ij,ij->j", op.weights[:, None] * probes, probes))
    probes = probes / norms
    dg = _gap_apply(op, limit_op, pair, probes)
    vals = op.energy_norms(dg)
    probe_max = float(vals.max())
    best = probes[:, int(vals.argmax())]
    info = {"probe_max": probe_max, "refined": False, "iterations": 0}
    value = probe_max
    if refine and probe_max > 1e-13:
        g = best
        sigma_prev = probe_max
        for it in range(max_iter):
            h = _gap_apply(op, limit_op, pair, g)
            g = _gap_adjoint(op, limit_op, pair, h)
            gn = op.l2_norm(g)
            if gn <= 0.0:
                break
            g = g / gn
            sigma = op.energy_norm(_gap_apply(op, limit_op, pair, g))
            if abs(sigma - sigma_prev) <= tol * max(sigma, 1e-300):
                sigma_prev = sigma
                break
            sigma_prev = sigma
        value = max(probe_max, float(sigma_prev))
        info.update({"refined": True, "iterations": it + 1})
    return value, info


def resolvent_gap_dense(op: OperatorDisc, limit_op: LimitOperator, pair: CouplingPair) -> float:
    """Slow oracle: exact operator norm of the resolvent gap by dense algebra."""
    n = op.n
    eye = np.eye(n)
    d = _gap_apply(op, limit_op, pair, eye)
    sd_ = op.weights[:, None] * op.apply(d)
    c = d.T @ sd_
    rw = 1.0 / np.sqrt(op.weights)
    sym = rw[:, None] * c * rw[None, :]
    ev = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    return float(np.sqrt(max(ev[-1], 0.0)))


def nonlinearity_gap(
    fspec,
    pair: CouplingPair,
    op: OperatorDisc,
    sample_radius: float,
    n_samples: int = 64,
    rng=None,
) -> float:
    """Max L2 residual ||f(lift u0) - lift f(u0)|| over limit states in a box.

    This is the lift-diagonal part of the nonlinearity rate; the Lipschitz
    part is a property of the scalar function and is checked separately.
    """
    rng = np.random.default_rng(rng)
    n_dim = pair.n_dim
    samples = rng.uniform(-sample_radius, sample_radius, size=(n_dim, n_samples))
    corners = np.array(np.meshgrid(*([[-sample_radius, sample_radius]] * n_dim))).reshape(n_dim, -1)
    samples = np.hstack([samples, corners])
    lifted = pair.lift_matrix @ samples
    resid = fspec(lifted) - pair.lift_matrix @ fspec(samples)
    norms = np.sqrt(np.einsum("ij,ij->j", op.weights[:, None] * resid, resid))
    return float(norms.max())


def projection_gap(spl: SpectralSplit, pair: CouplingPair) -> float:
    """Exact norm of (Q - I) lift over the unit ball of the limit space."""
    if spl.n_keep != pair.n_dim:
        raise ValueError(f"split keeps {spl.n_keep} modes but the coupling has n_dim={pair.n_dim}")
    op = spl.sd.op
    eb = pair.lift_matrix @ pair.limit_basis()
    d = spl.project(eb) - eb
    gram = np.array(
        [[op.energy_inner(d[:, i], d[:, j]) for j in range(pair.n_dim)] for i in range(pair.n_dim)]
    )
    return float(np.sqrt(max(np.linalg.eigvalsh(gram).max(), 0.0)))


def norm_nonequivalence(
    op: OperatorDisc,
    h1_op: OperatorDisc,
    n_probes: int = 32,
    power_iters: int = 60,
    rng=None,
) -> float:
    """Largest ratio energy-norm^2 / H1-norm^2 over mean-zero grid functions.

    Probe maximization plus generalized power iteration on the matrix pencil;
    the iteration settles on the top generalized eigenvalue.
    """
    rng = np.random.default_rng(rng)
    w = op.grid.weights if op.grid is not None else op.weights

    def demean(u):
        return u - np.dot(w, u) / w.sum()

    best, best_u = 0.0, None
    for _ in range(n_probes):
        u = demean(rng.standard_normal(op.n))
        r = op.energy_inner(u, u) / h1_op.energy_inner(u, u)
        if r > best:
            best, best_u = r, u
    u = best_u
    prev = best
    for _ in range(power_iters):
        u = demean(h1_op.solve(op.apply(u)))
        u = u / np.sqrt(h1_op.energy_inner(u, u))
        r = op.energy_inner(u, u) / h1_op.energy_inner(u, u)
        if abs(r - prev) <= 1e-6 * r:
            prev = r
            break
        prev = r
    return float(max(best, prev))


@dataclass
class GapReport:
    """Per-epsilon measured rate quantities (one CSV row)."""

    epsilon: float
    tau_hat: float
    rho_hat: float
    proj_gap: float
    norm_ratio: float

    def validate(self):
        vals = [self.tau_hat, self.rho_hat, self.proj_gap, self.norm_ratio]
        if any((not np.isfinite(v)) or v < 0 for v in vals):
            raise ValueError(f"gap report entries must be finite and nonnegative: {vals}")

    @staticmethod
    def csv_header() -> str:
        return "epsilon,tau_hat,rho_hat,proj_gap,norm_ratio"

    def csv_row(self) -> str:
        return (
            f"{self.epsilon:.17g},{self.tau_hat:.17g},{self.rho_hat:.17g},"
            f"{self.proj_gap:.17g},{self.norm_ratio:.17g}"
        )
