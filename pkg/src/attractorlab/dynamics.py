"""Nonlinear time maps, equilibria, attractor clouds and Hausdorff distances.

The full semigroup advances resolved eigen-coefficients with exponential-Euler
substeps (exact for constant forcing, first order in the substep).  The
reduced and limit flows are plain RK4 in the finite-dimensional coordinates;
their time-one maps are the discrete systems the shadowing module consumes.

Attractor clouds are built the Morse-Smale way: find hyperbolic equilibria,
saturate small offsets along unstable directions until they park at a stable
equilibrium, and resample the traced arcs at uniform arc length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.spatial.distance import cdist

from .manifold import GraphSection, SpectralGraphProblem, YCoordinates, reduced_rhs
from .operators import LimitOperator, OperatorDisc
from .spectral import SpectralSplit


# -- full semigroup -----------------------------------------------------------


class FullStepper:
    """Exponential-Euler integrator for the full semilinear problem.

    States live on the resolved eigen-span; both grid functions and
    coefficient arrays are accepted (grid functions are projected).
    """

    def __init__(self, spl: SpectralSplit, fspec, n_modes: int | None = None):
        sd = spl.sd
        self.op = sd.op
        self.fspec = fspec
        k = sd.k if n_modes is None else min(n_modes, sd.k)
        self.eigenvalues = sd.eigenvalues[:k]
        self.basis = sd.eigenvectors[:, :k]
        self.wbasis = (self.op.weights[:, None] * self.basis).T

    def coefficients(self, u):
        return self.wbasis @ np.asarray(u, dtype=float)

    def synthesize(self, c):
        return self.basis @ np.asarray(c, dtype=float)

    def step_coeffs(self, c, h: float, substeps: int = 1):
        if h < 0:
            raise ValueError("the full semigroup only runs forward")
        if substeps < 1 or h / max(substeps, 1) > 0.5:
            raise ValueError("substep must be at most 0.5 for the stated contract")
        tau = h / substeps
        lam = self.eigenvalues
        decay = np.exp(-lam * tau)
        gain = (1.0 - decay) / lam
        if c.ndim > 1:
            decay, gain = decay[:, None], gain[:, None]
        for _ in range(substeps):
            fc = self.wbasis @ self.fspec(self.synthesize(c))
            c = decay * c + gain * fc
        return c

    def step(self, u, h: float, substeps: int = 1):
        return self.synthesize(self.step_coeffs(self.coefficients(u), h, substeps))


def step_full(spl: SpectralSplit, fspec, u, h: float, substeps: int = 1):
    """One exponential-Euler advance of the full problem (module-level form)."""
    return FullStepper(spl, fspec).step(u, h, substeps)


# -- finite-dimensional flows -------------------------------------------------


def rk4_flow(field, z0, t_final: float, step: float, record_every: int = 0):
    """Integrate dz/dt = field(z) with classical RK4.

    With record_every > 0 also returns the trace every that many steps
    (including start and end); field maps (batch, d) -> (batch, d).
    """
    z = np.atleast_2d(np.asarray(z0, dtype=float)).copy()
    n_steps = max(int(round(t_final / step)), 1)
    h = t_final / n_steps
    trace = [z.copy()] if record_every else None
    for i in range(n_steps):
        k1 = field(z)
        k2 = field(z + 0.5 * h * k1)
        k3 = field(z + 0.5 * h * k2)
        k4 = field(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if record_every and ((i + 1) % record_every == 0 or i == n_steps - 1):
            trace.append(z.copy())
    if record_every:
        return z, np.array(trace)
    return z


@dataclass(frozen=True)
class OrbitSegment:
    times: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    flavor: str = "limit"


class FieldSurrogate:
    """Cubic B-spline replacement for an expensive low-dimensional function.

    Sampled once on a fine lattice over an enlarged box; exact spline
    prefiltering reproduces the sampled values and smooth fields to spline
    order (the builder records a validation error against direct evaluation).
    The margin keeps every clipped query several stencil widths away from the
    mirror boundary, where the only systematic artifact lives.
    """

    def __init__(self, field, box_lo, box_hi, margin: float = 1.6, nodes: int | None = None):
        from scipy import ndimage

        box_lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
        box_hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
        center = 0.5 * (box_lo + box_hi)
        half = 0.5 * (box_hi - box_lo) * margin
        self.lo = center - half
        self.hi = center + half
        self.n_dim = box_lo.shape[0]
        if nodes is None:
            nodes = 2049 if self.n_dim == 1 else 192
        axes = [np.linspace(lo, hi, nodes) for lo, hi in zip(self.lo, self.hi)]
        self._h = np.array([a[1] - a[0] for a in axes])
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        vals = np.atleast_2d(field(mesh))
        self.n_out = vals.shape[1]
        shape = tuple(len(a) for a in axes)
        self._coeffs = [
            ndimage.spline_filter(vals[:, j].reshape(shape), order=3, mode="mirror")
            for j in range(self.n_out)
        ]
        self._map_coordinates = ndimage.map_coordinates
        # validate on the working box; the margin band only shields the
        # mirror-boundary stencils and is never queried by callers
        check = np.random.default_rng(0).uniform(box_lo, box_hi, size=(64, self.n_dim))
        self.validation_error = float(np.abs(self(check) - field(check)).max())

    def __call__(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        z = np.clip(z, self.lo[None, :], self.hi[None, :])
        idx = ((z - self.lo[None, :]) / self._h[None, :]).T
        out = np.empty((z.shape[0], self.n_out))
        for j in range(self.n_out):
            out[:, j] = self._map_coordinates(
                self._coeffs[j], idx, order=3, prefilter=False, mode="mirror"
            )
        return out


# -- isomorphisms -------------------------------------------------------------


class Isomorphism:
    """Coordinates on the kept span / limit space with the weighted norm.

    The reduced side uses the projected lifted limit eigenvectors as basis;
    the limit side uses the limit eigenvectors themselves.  The coordinate
    norm weighs component j by the j-th kept eigenvalue (the energy-exponent
    alpha is one half).
    """

    def __init__(self, ycoords: YCoordinates, limit_op: LimitOperator):
        self.ycoords = ycoords
        self.limit_op = limit_op
        self.norm_weights = ycoords.kept_eigenvalues.copy()
        lvals, lvecs = limit_op.eigenpairs()
        self._lvecs = lvecs
        self._lvals = lvals
        self._lw = limit_op.weights

    # reduced side: kept coefficients <-> coordinates
    def forward(self, v):
        return self.ycoords.to_coords(v)

    def inverse(self, z):
        return self.ycoords.from_coords(z)

    # limit side: limit-space vectors <-> coordinates
    def limit_forward(self, x):
        x = np.asarray(x, dtype=float)
        w = self._lw[:, None] * x if x.ndim > 1 else self._lw * x
        return self._lvecs.T @ w

    def limit_inverse(self, z):
        return self._lvecs @ np.asarray(z, dtype=float)

    def norm(self, z):
        z = np.asarray(z, dtype=float)
        q = (self.norm_weights[:, None] * z**2).sum(axis=0) if z.ndim > 1 else (
            self.norm_weights * z**2
        ).sum()
        return np.sqrt(np.maximum(q, 0.0))

    def scale(self) -> np.ndarray:
        """Coordinate scaling that turns the weighted norm into Euclidean."""
        return np.sqrt(self.norm_weights)


# -- time-one maps ------------------------------------------------------------


@dataclass
class TimeOneMaps:
    """The four time-one maps plus the fields that generate them."""

    full_stepper: FullStepper
    reduced_field: callable
    limit_field: callable
    iso: Isomorphism
    full_substeps: int = 200
    ode_step: float = 0.005

    def full(self, u):
        return self.full_stepper.step(u, 1.0, self.full_substeps)

    def reduced(self, z):
        return rk4_flow(self.reduced_field, z, 1.0, self.ode_step)

    def limit(self, z):
        return rk4_flow(self.limit_field, z, 1.0, self.ode_step)

    def sup_gap(self, box_lo, box_hi, n_grid: int = 9, n_random: int = 64, rng=None) -> float:
        """Sup over the box of the weighted-norm gap between the two maps."""
        rng = np.random.default_rng(rng)
        box_lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
        box_hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
        d = box_lo.shape[0]
        axes = [np.linspace(lo, hi, n_grid) for lo, hi in zip(box_lo, box_hi)]
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        pts = np.vstack([mesh, rng.uniform(box_lo, box_hi, size=(n_random, d))])
        gap = self.reduced(pts) - self.limit(pts)
        return float(self.iso.norm(gap.T).max())


def time_one_maps(
    spl: SpectralSplit,
    section: GraphSection,
    ycoords: YCoordinates,
    fspec,
    limit_op: LimitOperator,
    full_substeps: int = 200,
    ode_step: float = 0.005,
    full_modes: int | None = None,
    surrogate_box=None,
) -> TimeOneMaps:
    """Assemble the full, reduced and limit time-one maps in shared coordinates.

    When a surrogate box is given, both finite-dimensional fields are replaced
    by cubic spline surrogates sampled on the same lattice, which keeps the
    reduced and limit maps bit-comparable in the exact-coupling fixture while
    removing the per-evaluation grid synthesis.
    """
    iso = Isomorphism(ycoords, limit_op)
    red_field = reduced_rhs(section, spl, fspec, ycoords)

    def limit_field(z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        x = iso.limit_inverse(z.T)
        rhs = -limit_op.apply(x) + fspec(x)
        return iso.limit_forward(rhs).T

    surrogate_error = 0.0
    if surrogate_box is not None:
        lo, hi = surrogate_box
        red_field = FieldSurrogate(red_field, lo, hi)
        limit_field = FieldSurrogate(limit_field, lo, hi)
        surrogate_error = max(red_field.validation_error, limit_field.validation_error)

    stepper = FullStepper(spl, fspec, n_modes=full_modes)
    maps = TimeOneMaps(
        full_stepper=stepper,
        reduced_field=red_field,
        limit_field=limit_field,
        iso=iso,
        full_substeps=full_substeps,
        ode_step=ode_step,
    )
    maps.surrogate_error = surrogate_error
    return maps


# -- equilibria ---------------------------------------------------------------


@dataclass
class Equilibrium:
    point: np.ndarray
    jac_eigenvalues: np.ndarray
    stable: bool
    hyperbolic: bool

    @property
    def n_unstable(self) -> int:
        return int(np.sum(np.real(self.jac_eigenvalues) > 0))


def _fd_jacobian(field, z, h: float = 1e-6):
    z = np.asarray(z, dtype=float)
    d = z.shape[0]
    jac = np.zeros((d, d))
    for j in range(d):
        dz = np.zeros(d)
        dz[j] = h * max(1.0, abs(z[j]))
        fp = field(np.atleast_2d(z + dz))[0]
        fm = field(np.atleast_2d(z - dz))[0]
        jac[:, j] = (fp - fm) / (2.0 * dz[j])
    return jac


def find_equilibria(
    field,
    box_lo,
    box_hi,
    seeds_per_dim: int = 7,
    newton_tol: float = 1e-12,
    max_newton: int = 60,
    dedup_tol: float = 1e-6,
    hyperbolic_margin: float = 1e-6,
) -> list[Equilibrium]:
    """Newton from a seed lattice; deduplicate; tag stability.

    Raises when any converged equilibrium fails the hyperbolicity margin (the
    Morse-Smale assumption the whole pipeline rests on).
    """
    box_lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
    box_hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
    d = box_lo.shape[0]
    axes = [np.linspace(lo, hi, seeds_per_dim) for lo, hi in zip(box_lo, box_hi)]
    seeds = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    found = []
    span = float(np.max(box_hi - box_lo))
    for seed in seeds:
        z = seed.copy()
        ok = False
        for _ in range(max_newton):
            f = field(np.atleast_2d(z))[0]
            if np.linalg.norm(f) < newton_tol:
                ok = True
                break
            jac = _fd_jacobian(field, z)
            try:
                dz = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError:
                break
            if np.linalg.norm(dz) > 2.0 * span:
                break
            z = z + dz
        if not ok or np.any(z < box_lo - 0.5 * span) or np.any(z > box_hi + 0.5 * span):
            continue
        if any(np.linalg.norm(z - e.point) < dedup_tol for e in found):
            continue
        jac = _fd_jacobian(field, z)
        ev = np.linalg.eigvals(jac)
        hyper = bool(np.min(np.abs(np.real(ev))) > hyperbolic_margin)
        found.append(
            Equilibrium(
                point=z,
                jac_eigenvalues=ev,
                stable=bool(np.max(np.real(ev)) < 0),
                hyperbolic=hyper,
            )
        )
    if not found:
        raise ValueError("no equilibria found in the box")
    bad = [e for e in found if not e.hyperbolic]
    if bad:
        raise ValueError(
            f"non-hyperbolic equilibrium at {bad[0].point}: Morse-Smale assumption violated"
        )
    found.sort(key=lambda e: tuple(e.point))
    return found


# -- attractor clouds ---------------------------------------------------------


@dataclass
class AttractorCloud:
    """Finite sample of an attractor: equilibria plus saturated unstable arcs."""

    points: np.ndarray
    equilibria: list
    arcs: list = field(default_factory=list)  # ordered fine traces, for set distance
    provenance: dict = field(default_factory=dict)

    @property
    def diameter(self) -> float:
        if self.points.shape[0] < 2:
            return 0.0
        return float(cdist(self.points, self.points).max())


def _resample_arc(trace: np.ndarray, n_points: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(trace, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return trace[:1]
    grid = np.linspace(0.0, s[-1], n_points)
    out = np.empty((n_points, trace.shape[1]))
    for d in range(trace.shape[1]):
        out[:, d] = np.interp(grid, s, trace[:, d])
    return out


def attractor_approximate(
    field,
    equilibria: list,
    offset: float = 1e-4,
    settle_tol: float = 1e-9,
    max_time: float = 400.0,
    ode_step: float = 0.005,
    n_points: int = 512,
    box_scale: float = 4.0,
) -> AttractorCloud:
    """Union of equilibria and forward-saturated unstable-manifold arcs.

    Each saddle sheds two seeds per unstable direction; all seeds advance
    together (batched flow chunks) until each settles near a stable
    equilibrium.  Arcs keep their fine traces (for polyline set distances) and
    the cloud is their uniform arc-length resample.
    """
    eq_pts = np.array([e.point for e in equilibria])
    if not any(e.n_unstable > 0 for e in equilibria):
        return AttractorCloud(points=eq_pts.copy(), equilibria=equilibria, arcs=[])
    span = max(float(cdist(eq_pts, eq_pts).max()), 1.0) if len(equilibria) > 1 else 1.0
    seeds, origins = [], []
    for eq in equilibria:
        if eq.n_unstable == 0:
            continue
        jac = _fd_jacobian(field, eq.point)
        ev, evec = np.linalg.eig(jac)
        for j in np.nonzero(np.real(ev) > 0)[0]:
            direction = np.real(evec[:, j])
            direction /= np.linalg.norm(direction)
            for sgn in (+1.0, -1.0):
                seeds.append(eq.point + sgn * offset * direction)
                origins.append(eq.point.copy())
    z = np.array(seeds)
    traces = [[o, s.copy()] for o, s in zip(origins, z)]
    active = np.ones(len(seeds), dtype=bool)
    stable_pts = np.array([e.point for e in equilibria if e.stable])
    if stable_pts.size == 0:
        raise ValueError("saddles present but no stable equilibrium to settle at")
    chunk = 0.25
    t = 0.0
    while t < max_time and active.any():
        znew, tr = rk4_flow(field, z[active], chunk, ode_step, record_every=5)
        t += chunk
        idx = np.nonzero(active)[0]
        for row, i in enumerate(idx):
            traces[i].extend(tr[1:, row, :])
            zi = znew[row]
            if np.linalg.norm(zi - origins[i]) > box_scale * span:
                raise ValueError(
                    "unstable orbit escaped the attractor box: dissipativeness violated"
                )
            dists = np.linalg.norm(stable_pts - zi[None, :], axis=1)
            if dists.min() < settle_tol:
                traces[i].append(stable_pts[int(dists.argmin())].copy())
                active[i] = False
        z[idx] = znew
    if active.any():
        raise ValueError("unstable orbit failed to settle at a stable equilibrium")
    arcs = [np.array(tr) for tr in traces]
    total_len = sum(
        float(np.linalg.norm(np.diff(a, axis=0), axis=1).sum()) for a in arcs
    )
    pieces = [eq_pts]
    for a in arcs:
        arc_len = float(np.linalg.norm(np.diff(a, axis=0), axis=1).sum())
        n_arc = max(int(round(n_points * arc_len / max(total_len, 1e-300))), 2)
        pieces.append(_resample_arc(a, n_arc))
    points = np.vstack(pieces)
    return AttractorCloud(
        points=points,
        equilibria=equilibria,
        arcs=arcs,
        provenance={"offset": offset, "settle_tol": settle_tol},
    )


def polyline_distance(points: np.ndarray, cloud: AttractorCloud) -> np.ndarray:
    """Distance from each point to the union of arc polylines and equilibria."""
    points = np.atleast_2d(points)
    best = cdist(points, np.array([e.point for e in cloud.equilibria])).min(axis=1)
    for arc in cloud.arcs:
        a, b = arc[:-1], arc[1:]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        denom[denom == 0.0] = 1.0
        for i, p in enumerate(points):
            t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, ab) / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            best[i] = min(best[i], float(np.linalg.norm(proj - p[None, :], axis=1).min()))
    return best


def invariance_defect(cloud: AttractorCloud, map_fn, subsample: int = 128) -> float:
    """How far the time-one image of the cloud drifts off the traced set."""
    pts = cloud.points
    if pts.shape[0] > subsample:
        idx = np.linspace(0, pts.shape[0] - 1, subsample).astype(int)
        pts = pts[idx]
    image = map_fn(pts)
    return float(polyline_distance(image, cloud).max())


# -- Hausdorff distances ------------------------------------------------------


def hausdorff(points_a: np.ndarray, points_b: np.ndarray, scale=None):
    """Exact max-min distances between finite clouds.

    ``scale`` turns a weighted norm into the Euclidean one coordinate-wise.
    Returns (semidist_ab, semidist_ba, symmetric).
    """
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff distance of an empty cloud")
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
        a = a * scale[None, :]
        b = b * scale[None, :]
    d = cdist(a, b)
    ab = float(d.min(axis=1).max())
    ba = float(d.min(axis=0).max())
    return ab, ba, max(ab, ba)


def hausdorff_functions(op: OperatorDisc, cloud_a: np.ndarray, cloud_b: np.ndarray):
    """Hausdorff distances between clouds of grid functions in the energy norm.

    Candidate nearest neighbours come from the energy Gram expansion; the
    winning distances are recomputed by direct subtraction, which removes the
    sqrt(machine-eps) floor the expanded form carries.
    """
    a = np.atleast_2d(cloud_a)
    b = np.atleast_2d(cloud_b)
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff distance of an empty cloud")
    sa = (op.weights[:, None] * op.apply(a.T)).T  # S a_i rows
    gaa = np.einsum("ij,ij->i", a, sa)
    sb = (op.weights[:, None] * op.apply(b.T)).T
    gbb = np.einsum("ij,ij->i", b, sb)
    cross = a @ sb.T
    d2 = gaa[:, None] + gbb[None, :] - 2.0 * cross

    def refined_min(rows, other, d2_rows):
        k = min(3, d2_rows.shape[1])
        cand = np.argpartition(d2_rows, k - 1, axis=1)[:, :k]
        out = np.empty(rows.shape[0])
        for i in range(rows.shape[0]):
            diffs = rows[i][None, :] - other[cand[i]]
            out[i] = op.energy_norms(diffs.T).min()
        return out

    ab = float(refined_min(a, b, d2).max())
    ba = float(refined_min(b, a, d2.T).max())
    return ab, ba, max(ab, ba)


# -- equilibria of the full discretization ------------------------------------


def full_equilibrium(
    op: OperatorDisc,
    fspec,
    u0: np.ndarray,
    newton_tol: float = 1e-10,
    max_newton: int = 50,
):
    """Newton for A u = f(u) on the grid, seeded at u0.

    Returns (u, residual_l2); raises on divergence.  Convergence is accepted
    at the rounding floor of the stiff residual (entries scale like p/h^2, so
    the applied operator cannot be evaluated below that).
    """
    u = np.asarray(u0, dtype=float).copy()
    n = op.n
    ab = np.zeros((3, n))
    floor = 64.0 * np.finfo(float).eps * float(np.abs(op.diag).max())
    best_u, best_rn = u.copy(), np.inf
    for _ in range(max_newton):
        r = op.apply(u) - fspec(u)
        rn = op.l2_norm(r)
        if rn < best_rn:
            best_u, best_rn = u.copy(), rn
        if rn < max(newton_tol, floor * (1.0 + np.abs(u).max())):
            return u, rn
        # symmetrized Jacobian is tridiagonal: B - diag(f'(u))
        ab[0, 1:] = op.offdiag
        ab[1] = op.diag - fspec.deriv(u)
        ab[2, :-1] = op.offdiag
        rhs = -op._sqrt_w * r
        try:
            y = solve_banded((1, 1), ab, rhs)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular Jacobian in full Newton: {exc}") from exc
        du = y / op._sqrt_w
        if not np.all(np.isfinite(du)) or np.abs(du).max() > 1e6:
            raise ValueError("full Newton diverged")
        u = u + du
    if best_rn < max(newton_tol, floor * (1.0 + np.abs(best_u).max())) * 1e3:
        return best_u, best_rn
    raise ValueError(f"full Newton did not converge (residual {best_rn:.2e})")


def equilibrium_rate(
    limit_equilibria: list,
    op: OperatorDisc,
    pair,
    fspec,
    iso: Isomorphism | None = None,
) -> list[dict]:
    """Distance of each full equilibrium from its lifted limit counterpart."""
    out = []
    for eq in limit_equilibria:
        x0 = iso.limit_inverse(eq.point) if iso is not None else eq.point
        lifted = pair.lift(x0)
        try:
            u, resid = full_equilibrium(op, fspec, lifted)
        except ValueError as exc:
            out.append({"limit_point": x0, "distance": np.nan, "flag": str(exc)})
            continue
        dist = op.energy_norm(u - lifted)
        out.append({"limit_point": x0, "distance": float(dist), "flag": "", "residual": resid})
    return out
