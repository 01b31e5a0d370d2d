"""Config-driven sweep runner: assemble, decompose, couple, reduce, compare.

One sweep walks the epsilon list (descending), runs the full pipeline at each
value, persists a JSON artifact per epsilon (the resume unit), and fits
log-log rates over the collected columns.  Rule evaluation mirrors the
acceptance gates so the command-line runner can exit 0/2 on pass/fail.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import coupling as cpl
from . import dynamics as dyn
from . import manifold as mfd
from . import shadowing as shd
from .nonlinearity import cutoff_cubic
from .operators import Coefficients, Grid, assemble
from .problems import build_setup
from .spectral import eigendecompose, split, verify_linear_estimates

DEFAULT_EPSILONS = [0.2, 0.1, 0.05, 0.025, 0.0125]

DEFAULT_TOLERANCES = {
    "fixed_point_tol": 1e-6,
    "cloud_invariance_tol": 1e-4,
    "roundtrip_tol": 1e-12,
    "synthetic_zero_tol": 1e-8,
    "slope_window_sqrt": [0.4, 0.6],
    "slope_window_quarter": [0.15, 0.35],
    "norm_ratio_window": [0.8, 1.2],
    "quotient_spread_max": 5.0,
    "slope_agreement": 0.15,
    "r2_min": 0.98,
    "gap_growth_exponent_min": 0.8,
}

_CONFIG_KEYS = {
    "problem",
    "params",
    "epsilons",
    "n_cells",
    "seed",
    "cutoff_radius",
    "output_dir",
    "tolerances",
    "n_tail",
    "cloud_points",
    "shadow_trials",
    "probe_count",
    "run_oracles",
}


@dataclass
class SweepConfig:
    """Validated sweep configuration (unknown keys are rejected)."""

    problem: str
    params: dict = field(default_factory=dict)
    epsilons: list = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    n_cells: int = 2000
    seed: int = 0
    cutoff_radius: float = 4.0
    output_dir: str = "runs/sweep"
    tolerances: dict = field(default_factory=dict)
    n_tail: int = 200
    cloud_points: int = 0  # 0: per-dimension default (512 scalar, 4096 planar)
    shadow_trials: int = 20
    probe_count: int = 64
    run_oracles: bool = False

    def __post_init__(self):
        if self.problem not in {"homogenization", "localized", "synthetic"}:
            raise ValueError(f"unknown problem {self.problem!r}")
        eps = [float(e) for e in self.epsilons]
        if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be positive and strictly descending")
        self.epsilons = eps
        tol = dict(DEFAULT_TOLERANCES)
        tol.update(self.tolerances)
        self.tolerances = tol

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        with open(path) as fh:
            raw = json.load(fh)
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "problem" not in raw:
            raise ValueError("config must name a problem")
        return cls(**raw)

    def content_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def fit_rate(pairs):
    """Least squares on (log eps, log value); returns slope, intercept, r2, n.

    Nonpositive values are excluded and counted in the result.
    """
    pairs = [(float(e), float(v)) for e, v in pairs]
    kept = [(e, v) for e, v in pairs if v > 0 and np.isfinite(v)]
    excluded = len(pairs) - len(kept)
    if len(kept) < 3:
        return {"slope": np.nan, "intercept": np.nan, "r2": np.nan, "n": len(kept), "excluded": excluded}
    x = np.log([e for e, _ in kept])
    y = np.log([v for _, v in kept])
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return {
        "slope": float(coef[0]),
        "intercept": float(coef[1]),
        "r2": r2,
        "n": len(kept),
        "excluded": excluded,
    }


def _function_polyline_distance(op, points, arcs):
    """Energy-norm distance from grid functions to lifted arc polylines.

    The Gram expansion locates the best segment; the winning distance is then
    recomputed by direct subtraction to dodge the cancellation floor.
    """
    points = np.atleast_2d(points)
    s_pts = (op.weights[:, None] * op.apply(points.T)).T
    pp = np.einsum("ij,ij->i", points, s_pts)
    best = np.full(points.shape[0], np.inf)
    for arc in arcs:
        a, b = arc[:-1], arc[1:]
        ab = b - a
        s_a = (op.weights[:, None] * op.apply(a.T)).T
        s_ab = (op.weights[:, None] * op.apply(ab.T)).T
        aa = np.einsum("ij,ij->i", a, s_a)
        ab_ab = np.einsum("ij,ij->i", ab, s_ab)
        a_ab = np.einsum("ij,ij->i", a, s_ab)
        p_a = points @ s_a.T  # (q, m)
        p_ab = points @ s_ab.T
        denom = np.where(ab_ab > 0, ab_ab, 1.0)
        t = np.clip((p_ab - a_ab[None, :]) / denom[None, :], 0.0, 1.0)
        d2 = (
            pp[:, None]
            - 2.0 * (p_a + t * p_ab)
            + aa[None, :]
            + 2.0 * t * a_ab[None, :]
            + t**2 * ab_ab[None, :]
        )
        seg = d2.argmin(axis=1)
        for i, j in enumerate(seg):
            nearest = a[j] + t[i, j] * ab[j]
            best[i] = min(best[i], float(op.energy_norm(points[i] - nearest)))
    return best


class EpsilonRun:
    """Pipeline state and measurements at a single epsilon."""

    def __init__(self, config: SweepConfig, epsilon: float, index: int):
        self.config = config
        self.epsilon = epsilon
        self.rng = np.random.default_rng([config.seed, index, 20240601])
        self.row = {"epsilon": epsilon, "status": "ok", "skip_reason": ""}
        self.artifacts = {}

    def execute(self) -> dict:
        cfg = self.config
        t0 = time.time()
        setup = build_setup(cfg.problem, self.epsilon, cfg.n_cells, cfg.params)
        op, limit = setup.op, setup.limit
        n_keep = setup.n_keep
        fs = cutoff_cubic(cfg.cutoff_radius)
        k = min(op.n, n_keep + cfg.n_tail + 64)
        sd = eigendecompose(op, k=k)
        spl = split(sd, n_keep)
        row = self.row
        for j in range(4):
            row[f"lambda_{j + 1}"] = float(sd.eigenvalues[j]) if sd.k > j else np.nan
        row["gap_ratio"] = spl.gap_ratio

        pair_params = dict(cfg.params)
        pair_params["epsilon"] = self.epsilon
        if cfg.problem == "synthetic":
            pair_params = {"n_dim": n_keep, "n_total": op.n}
        pair = cpl.make_coupling(cfg.problem, op.grid, pair_params)
        row["roundtrip_defect"] = pair.roundtrip_defect()

        tau, tau_info = cpl.resolvent_gap(
            op, limit, pair, sd=sd, n_random=cfg.probe_count, rng=self.rng
        )
        row["tau_hat"] = tau
        row["tau_probe_max"] = tau_info["probe_max"]
        if cfg.run_oracles:
            row["tau_dense_oracle"] = cpl.resolvent_gap_dense(op, limit, pair)

        sample_radius = 1.5
        row["rho_hat"] = cpl.nonlinearity_gap(fs, pair, op, sample_radius, rng=self.rng)
        row["proj_gap"] = cpl.projection_gap(spl, pair)
        if op.grid is not None:
            h1 = assemble(
                op.grid,
                Coefficients.from_callables(op.grid, 1.0, 0.0, 1.0, "h1"),
                m0=0.1,
            )
            row["norm_ratio"] = cpl.norm_nonequivalence(op, h1, rng=self.rng)
        else:
            row["norm_ratio"] = np.nan

        try:
            self._dynamics_stages(setup, sd, spl, pair, fs, row)
        except ValueError as exc:
            row["status"] = "skipped"
            row["skip_reason"] = str(exc)
        row["wall_time"] = time.time() - t0
        return row

    def _dynamics_stages(self, setup, sd, spl, pair, fs, row):
        cfg = self.config
        op, limit = setup.op, setup.limit
        n_keep = setup.n_keep
        ycoords = mfd.make_y_coordinates(spl, pair, limit)
        iso = dyn.Isomorphism(ycoords, limit)

        def limit_field(z):
            z2 = np.atleast_2d(np.asarray(z, dtype=float))
            x = iso.limit_inverse(z2.T)
            return iso.limit_forward(-limit.apply(x) + fs(x)).T

        seed_half = max(2.0, fs.cutoff_radius / 2.0)
        limit_eqs = dyn.find_equilibria(limit_field, [-seed_half] * n_keep, [seed_half] * n_keep)
        eq_pts = np.array([e.point for e in limit_eqs])
        ext_lo, ext_hi = eq_pts.min(axis=0), eq_pts.max(axis=0)
        center = 0.5 * (ext_lo + ext_hi)
        half = 0.75 * (ext_hi - ext_lo)  # box inflated 1.5x around the attractor extent
        floor = max(0.15 * float(half.max()), 0.1)
        half = np.maximum(half, floor)
        box_lo, box_hi = center - half, center + half
        row["n_limit_equilibria"] = len(limit_eqs)

        constants = mfd.check_constants(
            spl, fs, ycoords, box_lo, box_hi, limit_op=limit, n_tail=cfg.n_tail, rng=self.rng
        )
        row["manifold_contraction"] = constants.contraction
        row["manifold_rho"] = constants.nonlin_bound
        row["manifold_beta"] = constants.tail_rate
        if not constants.passed:
            row["status"] = "skipped"
            row["skip_reason"] = f"manifold regime: {constants.failing}"
            return

        n_tail_avail = min(cfg.n_tail, sd.k - n_keep)
        sec0 = mfd.zero_section(
            box_lo, box_hi, spl.tail_eigenvalues[:n_tail_avail], self.epsilon
        )
        tol_fp = cfg.tolerances["fixed_point_tol"]
        section, fp_info = mfd.solve_fixed_point(
            sec0, spl, fs, ycoords, constants, tol=tol_fp
        )
        row["manifold_sup"] = section.sup_norm
        row["manifold_lip"] = section.lip_bound
        row["manifold_iterations"] = fp_info["iterations"]
        self.artifacts["graph_section"] = section

        maps = dyn.time_one_maps(
            spl,
            section,
            ycoords,
            fs,
            limit,
            full_modes=n_keep + min(64, sd.k - n_keep),
            surrogate_box=(box_lo, box_hi),
        )
        row["field_surrogate_error"] = maps.surrogate_error
        row["smap_gap"] = maps.sup_gap(box_lo, box_hi, rng=self.rng)

        # equilibria and clouds all live on the surrogate fields so the two
        # sides of every comparison go through identical computations
        limit_eqs = dyn.find_equilibria(maps.limit_field, box_lo, box_hi)
        reduced_eqs = dyn.find_equilibria(maps.reduced_field, box_lo, box_hi)
        row["n_reduced_equilibria"] = len(reduced_eqs)
        if len(reduced_eqs) != len(limit_eqs):
            row["status"] = "skipped"
            row["skip_reason"] = (
                f"equilibrium count mismatch: reduced {len(reduced_eqs)} vs limit {len(limit_eqs)}"
            )
            return

        n_cloud = cfg.cloud_points or (512 if n_keep == 1 else 4096)
        cloud_limit = dyn.attractor_approximate(maps.limit_field, limit_eqs, n_points=n_cloud)
        cloud_reduced = dyn.attractor_approximate(maps.reduced_field, reduced_eqs, n_points=n_cloud)
        self.artifacts["cloud_limit"] = cloud_limit
        self.artifacts["cloud_reduced"] = cloud_reduced
        row["invariance_limit"] = dyn.invariance_defect(cloud_limit, maps.limit)
        row["invariance_reduced"] = dyn.invariance_defect(cloud_reduced, maps.reduced)

        scale = iso.scale()
        _, _, d_rn = dyn.hausdorff(cloud_reduced.points, cloud_limit.points, scale=scale)
        row["d_rn"] = d_rn

        # lift both clouds into the grid space and take the energy Hausdorff
        def lift_reduced(zpts):
            v = ycoords.basis @ zpts.T
            tails = section.interpolate(zpts)
            prob = mfd.SpectralGraphProblem(spl, fs, ycoords, n_tail=section.n_tail)
            return (prob.basis[:, :n_keep] @ v + prob.basis[:, n_keep:] @ tails.T).T

        lifted = lift_reduced(cloud_reduced.points)
        lifted_limit = (pair.lift_matrix @ iso.limit_inverse(cloud_limit.points.T)).T
        _, _, d_eps = dyn.hausdorff_functions(op, lifted, lifted_limit)
        row["d_eps"] = d_eps

        # full-map invariance of the lifted attractor against the lifted arcs
        sub = lifted[:: max(1, lifted.shape[0] // 32)]
        image = maps.full(sub.T).T
        arcs_lifted = [lift_reduced(dyn._resample_arc(a, 192)) for a in cloud_reduced.arcs]
        if arcs_lifted:
            row["invariance_full"] = float(
                _function_polyline_distance(op, image, arcs_lifted).max()
            )
        else:
            row["invariance_full"] = float(op.energy_norms((image - sub).T).max())

        rates = dyn.equilibrium_rate(limit_eqs, op, pair, fs, iso)
        dists = [r["distance"] for r in rates]
        for j in range(3):
            row[f"eq_dist_{j + 1}"] = float(dists[j]) if j < len(dists) else np.nan
        good = [d for d in dists if np.isfinite(d)]
        row["eq_dist_max"] = max(good) if good else np.nan
        row["eq_flags"] = ";".join(r["flag"] for r in rates if r["flag"])

        # shadowing cross-check between the two time-one maps; the maps are
        # sampled once into cubic surrogates so orbit generation and the
        # sequence-space Newton stay cheap
        nodes_map = 1025 if n_keep == 1 else 96
        smap_eps = dyn.FieldSurrogate(maps.reduced, box_lo, box_hi, margin=1.4, nodes=nodes_map)
        smap_lim = dyn.FieldSurrogate(maps.limit, box_lo, box_hi, margin=1.4, nodes=nodes_map)
        row["map_surrogate_error"] = max(smap_eps.validation_error, smap_lim.validation_error)
        s_eps_map = shd.DiscreteMap(
            evaluate=smap_eps, box_lo=box_lo, box_hi=box_hi, norm_weights=iso.norm_weights
        )
        s0_map = shd.DiscreteMap(
            evaluate=smap_lim, box_lo=box_lo, box_hi=box_hi, norm_weights=iso.norm_weights
        )
        scaled_pts = cloud_limit.points * scale[None, :]
        from scipy.spatial.distance import cdist

        diam = float(cdist(scaled_pts, scaled_pts).max()) or 1.0
        delta0 = max(1e-3 * diam, row["smap_gap"] * 1.05)
        try:
            l_hat, shadow_info = shd.lpsp_estimate(
                s0_map,
                box_lo,
                box_hi,
                trials=cfg.shadow_trials,
                delta0=delta0,
                rng=self.rng,
            )
            row["shadow_l_hat"] = l_hat
            row["shadow_failures"] = shadow_info["failures"]
            verdict = shd.attractor_bound(
                s_eps_map,
                s0_map,
                cloud_reduced.points,
                cloud_limit.points,
                l_hat,
                box_lo,
                box_hi,
                delta0,
                noise_floor=1e-7 * diam + 100.0 * 1e-9,
                rng=self.rng,
            )
            row["shadow_verdict"] = verdict["verdict"]
            row["shadow_margin"] = verdict["margin"]
            self.artifacts["shadow_info"] = shadow_info
        except ValueError as exc:
            row["shadow_l_hat"] = np.nan
            row["shadow_verdict"] = f"error: {exc}"

        est = verify_linear_estimates(
            spl, limit, pair, resolvent_rate=tau, rng=self.rng
        )
        row["linear_estimates_pass"] = est.passed()
        self.artifacts["estimates"] = est


@dataclass
class ConvergenceReport:
    """Sweep rows plus fitted rates and rule outcomes."""

    config: SweepConfig
    rows: list
    slopes: dict = field(default_factory=dict)
    rules: list = field(default_factory=list)

    COLUMNS = [
        "epsilon",
        "status",
        "skip_reason",
        "lambda_1",
        "lambda_2",
        "lambda_3",
        "lambda_4",
        "gap_ratio",
        "roundtrip_defect",
        "tau_hat",
        "tau_probe_max",
        "rho_hat",
        "proj_gap",
        "norm_ratio",
        "manifold_sup",
        "manifold_lip",
        "manifold_contraction",
        "smap_gap",
        "d_rn",
        "d_eps",
        "eq_dist_1",
        "eq_dist_2",
        "eq_dist_3",
        "eq_dist_max",
        "invariance_limit",
        "invariance_reduced",
        "invariance_full",
        "shadow_l_hat",
        "shadow_verdict",
        "n_limit_equilibria",
        "n_reduced_equilibria",
        "wall_time",
    ]

    def ok_rows(self):
        return [r for r in self.rows if r.get("status") == "ok"]

    def column(self, name, only_ok=True):
        rows = self.ok_rows() if only_ok else self.rows
        return [(r["epsilon"], r.get(name, np.nan)) for r in rows]

    def passed(self) -> bool:
        return all(r["passed"] for r in self.rules if r["passed"] is not None)


RATE_COLUMNS = [
    "tau_hat",
    "rho_hat",
    "proj_gap",
    "norm_ratio",
    "manifold_sup",
    "smap_gap",
    "d_rn",
    "d_eps",
    "eq_dist_max",
]


def _fit_all(report: ConvergenceReport):
    for col in RATE_COLUMNS:
        report.slopes[col] = fit_rate(report.column(col))
    tau2 = [(e, v**2) for e, v in report.column("tau_hat")]
    report.slopes["tau_hat_sq"] = fit_rate(tau2)
    quotient = []
    for r in report.ok_rows():
        denom = r.get("tau_hat", np.nan) + r.get("rho_hat", np.nan)
        if denom > 0 and np.isfinite(r.get("manifold_sup", np.nan)):
            quotient.append((r["epsilon"], r["manifold_sup"] / denom))
    report.slopes["manifold_quotient"] = fit_rate(quotient)
    if quotient:
        vals = [v for _, v in quotient if v > 0]
        report.slopes["manifold_quotient"]["spread"] = (
            max(vals) / min(vals) if vals else np.nan
        )


def _window(value, window):
    return np.isfinite(value) and window[0] <= value <= window[1]


def evaluate_rules(report: ConvergenceReport):
    """Per-sweep acceptance rules (the criteria the exit code reflects)."""
    cfg = report.config
    tol = cfg.tolerances
    rules = []

    def add(name, passed, detail):
        rules.append({"rule": name, "passed": passed, "detail": detail})

    rows = report.ok_rows()
    all_rows = report.rows
    if cfg.problem == "synthetic":
        zt = tol["synthetic_zero_tol"]
        worst = {}
        for key in ["tau_hat", "rho_hat", "proj_gap", "manifold_sup", "smap_gap", "d_eps"]:
            vals = [abs(r.get(key, np.nan)) for r in rows]
            worst[key] = max(vals) if vals else np.nan
            add(
                f"synthetic_zero[{key}]",
                bool(vals) and worst[key] <= zt,
                f"max {worst[key]:.3e} <= {zt:g}",
            )
        return rules

    sl = report.slopes
    if cfg.problem == "localized":
        lam1 = [
            abs(r["lambda_1"] - cfg.params.get("lam", 0.1))
            for r in all_rows
            if r.get("lambda_1") is not None
        ]
        add(
            "spectral_limit[lambda_1]",
            bool(lam1) and max(lam1) <= 1e-10,
            f"max |lambda_1 - lam| = {max(lam1):.2e}" if lam1 else "no rows",
        )
        from .operators import limit_operator

        lim = limit_operator(
            "localized",
            {k: cfg.params.get(k, d) for k, d in
             [("lam", 0.1), ("a1", 1.0), ("l1", 1.0), ("x1", 0.5)]},
        )
        lam2_inf = float(lim.eigenpairs()[0][-1])
        with_l2 = [r for r in all_rows if r.get("lambda_2") is not None]
        errs = [abs(r["lambda_2"] - lam2_inf) for r in with_l2]
        mono = bool(errs) and all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))
        add("spectral_limit[lambda_2_monotone]", mono, f"errors {['%.3e' % e for e in errs]}")
        eps = [r["epsilon"] for r in with_l2]
        pairs = dict(zip(eps, errs))
        e_hi = next((e for e in eps if abs(e - 0.05) < 1e-12), None)
        e_lo = next((e for e in eps if abs(e - 0.0125) < 1e-12), None)
        if e_hi is not None and e_lo is not None and pairs[e_lo] > 0:
            factor = pairs[e_hi] / pairs[e_lo]
            add("spectral_limit[lambda_2_factor]", factor >= 2.0, f"factor {factor:.2f} >= 2")
        lam3 = [
            (1.0 / r["epsilon"], r["lambda_3"])
            for r in all_rows
            if r.get("lambda_3") is not None
        ]
        growth = fit_rate([(x, v) for x, v in lam3])
        add(
            "spectral_limit[lambda_3_growth]",
            np.isfinite(growth["slope"]) and growth["slope"] >= tol["gap_growth_exponent_min"],
            f"exponent {growth['slope']:.3f} >= {tol['gap_growth_exponent_min']}",
        )
        win = tol["slope_window_sqrt"]
        add(
            "resolvent_rate[tau_sq_slope]",
            _window(sl["tau_hat_sq"]["slope"], win),
            f"slope {sl['tau_hat_sq']['slope']:.3f} in {win}",
        )
        win_d = tol["slope_window_quarter"]
        add(
            "attractor_rate[d_eps_slope]",
            _window(sl["d_eps"]["slope"], win_d),
            f"slope {sl['d_eps']['slope']:.3f} in {win_d}",
        )
    else:  # homogenization
        win = tol["slope_window_sqrt"]
        add(
            "resolvent_rate[tau_slope]",
            _window(sl["tau_hat"]["slope"], win) and sl["tau_hat"]["r2"] >= tol["r2_min"],
            f"slope {sl['tau_hat']['slope']:.3f} in {win}, r2 {sl['tau_hat']['r2']:.4f}",
        )
        add(
            "attractor_rate[d_eps_slope]",
            _window(sl["d_eps"]["slope"], win),
            f"slope {sl['d_eps']['slope']:.3f} in {win}",
        )
        add(
            "equilibrium_rate[slope]",
            _window(sl["eq_dist_max"]["slope"], win),
            f"slope {sl['eq_dist_max']['slope']:.3f} in {win}",
        )
        ratio_fit = fit_rate([(1.0 / e, v) for e, v in report.column("norm_ratio")])
        add(
            "norm_nonequivalence[exponent]",
            _window(ratio_fit["slope"], tol["norm_ratio_window"]),
            f"exponent {ratio_fit['slope']:.3f} in {tol['norm_ratio_window']}",
        )

    spread = sl.get("manifold_quotient", {}).get("spread", np.nan)
    add(
        "manifold_rate[quotient_spread]",
        np.isfinite(spread) and spread <= tol["quotient_spread_max"],
        f"max/min quotient {spread:.2f} <= {tol['quotient_spread_max']}",
    )
    tau_rho = [
        (e, t + rh)
        for (e, t), (_, rh) in zip(report.column("tau_hat"), report.column("rho_hat"))
    ]
    agree = abs(sl["smap_gap"]["slope"] - fit_rate(tau_rho)["slope"])
    add(
        "reduced_map_gap[slope_agreement]",
        np.isfinite(agree) and agree <= tol["slope_agreement"],
        f"|slope(S-gap) - slope(tau+rho)| = {agree:.3f} <= {tol['slope_agreement']}",
    )
    bad_inv = [
        r["epsilon"]
        for r in rows
        if max(r.get("invariance_limit", 0), r.get("invariance_reduced", 0))
        > tol["cloud_invariance_tol"]
    ]
    add(
        "invariants[cloud_invariance]",
        bool(rows) and not bad_inv,
        f"clouds drift at eps {bad_inv}" if bad_inv else f"{len(rows)} rows, all clouds invariant",
    )
    with_rt = [r for r in all_rows if r.get("roundtrip_defect") is not None]
    bad_rt = [r["epsilon"] for r in with_rt if r["roundtrip_defect"] > tol["roundtrip_tol"]]
    add(
        "invariants[average_lift_identity]",
        bool(with_rt) and not bad_rt,
        f"roundtrip fails at {bad_rt}" if bad_rt else "identity to tolerance",
    )
    return rules


def run_sweep(config: SweepConfig, progress=None) -> ConvergenceReport:
    """Run (or resume) the sweep and fit the rates.

    Each epsilon persists its row as JSON keyed by the config hash; a re-run
    with the same config reloads rows verbatim, so resumed sweeps cannot
    drift.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.content_hash()
    rows = []
    for i, eps in enumerate(config.epsilons):
        artifact = out / f"eps_{i:02d}.json"
        row = None
        if artifact.exists():
            with open(artifact) as fh:
                stored = json.load(fh)
            if stored.get("config_hash") == chash and stored.get("row", {}).get("epsilon") == eps:
                row = stored["row"]
        if row is None:
            run = EpsilonRun(config, eps, i)
            try:
                row = run.execute()
            except ValueError as exc:
                row = {
                    "epsilon": eps,
                    "status": "skipped",
                    "skip_reason": str(exc),
                }
            _persist_row(artifact, chash, row)
            _persist_artifacts(out, i, run)
        if progress:
            progress(row)
        rows.append(row)
    report = ConvergenceReport(config=config, rows=rows)
    _fit_all(report)
    report.rules = evaluate_rules(report)
    return report


def _persist_row(path, chash, row):
    safe = {}
    for k, v in row.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        safe[k] = v
    with open(path, "w") as fh:
        json.dump({"config_hash": chash, "row": safe}, fh, indent=1, sort_keys=True)


def _persist_artifacts(out: Path, index: int, run: EpsilonRun):
    sec = run.artifacts.get("graph_section")
    if sec is not None:
        sec.write_text(out / f"graph_eps_{index:02d}.txt")
    est = run.artifacts.get("estimates")
    if est is not None:
        (out / f"estimates_eps_{index:02d}.csv").write_text("\n".join(est.to_csv_lines()) + "\n")
    info = run.artifacts.get("shadow_info")
    if info is not None:
        (out / f"shadow_eps_{index:02d}.csv").write_text(
            "\n".join(shd.trial_log_lines(info)) + "\n"
        )
    for name in ("cloud_limit", "cloud_reduced"):
        cloud = run.artifacts.get(name)
        if cloud is not None:
            lines = ["# " + ",".join(f"z{j}" for j in range(cloud.points.shape[1])) + ",tag"]
            for e in cloud.equilibria:
                tag = "stable" if e.stable else "saddle"
                lines.append(",".join(f"{v:.17g}" for v in e.point) + f",{tag}")
            for p in cloud.points:
                lines.append(",".join(f"{v:.17g}" for v in p) + ",arc")
            (out / f"{name}_eps_{index:02d}.csv").write_text("\n".join(lines) + "\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if not np.isfinite(v):
            return "nan"
        return f"{v:.17g}"
    return str(v)


def emit_report(report: ConvergenceReport, out_dir=None) -> dict:
    """Write run.csv, rates.csv, summary.txt and two-column plot data files."""
    out = Path(out_dir or report.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    run_csv = out / "run.csv"
    lines = ["# attractorlab run.csv v1: one row per epsilon, columns fixed"]
    lines.append(",".join(ConvergenceReport.COLUMNS))
    for r in report.rows:
        lines.append(",".join(_fmt(r.get(c)) for c in ConvergenceReport.COLUMNS))
    run_csv.write_text("\n".join(lines) + "\n")
    files["run"] = run_csv

    rates_csv = out / "rates.csv"
    lines = ["# attractorlab rates.csv v1: log-log fits per quantity"]
    lines.append("quantity,slope,intercept,r2,n_points,excluded")
    for name, fit in sorted(report.slopes.items()):
        lines.append(
            f"{name},{_fmt(fit.get('slope'))},{_fmt(fit.get('intercept'))},"
            f"{_fmt(fit.get('r2'))},{fit.get('n', 0)},{fit.get('excluded', 0)}"
        )
    rates_csv.write_text("\n".join(lines) + "\n")
    files["rates"] = rates_csv

    for col in RATE_COLUMNS:
        pairs = [(e, v) for e, v in report.column(col) if np.isfinite(v)]
        pf = out / f"plot_{col}.dat"
        pf.write_text(
            "\n".join(f"{e:.17g} {v:.17g}" for e, v in pairs) + ("\n" if pairs else "")
        )
        files[f"plot_{col}"] = pf

    summary = out / "summary.txt"
    text = [f"attractorlab sweep: problem={report.config.problem} seed={report.config.seed}"]
    ok = report.ok_rows()
    text.append(f"epsilons: {report.config.epsilons}")
    if not report.rows:
        text.append("no rows")
    text.append(f"completed rows: {len(ok)} / {len(report.rows)}")
    for r in report.rows:
        if r.get("status") != "ok":
            text.append(f"  eps={r['epsilon']}: SKIPPED ({r.get('skip_reason', '')})")
    text.append("")
    text.append("fitted rates (log-log):")
    for name, fit in sorted(report.slopes.items()):
        if np.isfinite(fit.get("slope", np.nan)):
            text.append(
                f"  {name:<20} slope {fit['slope']:+.3f}  r2 {fit['r2']:.4f}  (n={fit['n']})"
            )
    text.append("")
    text.append("rules:")
    for rule in report.rules:
        mark = {True: "PASS", False: "FAIL", None: "n/a "}[rule["passed"]]
        text.append(f"  [{mark}] {rule['rule']}: {rule['detail']}")
    text.append("")
    text.append(f"overall: {'PASS' if report.passed() else 'FAIL'}")
    summary.write_text("\n".join(text) + "\n")
    files["summary"] = summary
    return files


def default_config(problem: str, output_dir: str | None = None, **overrides) -> SweepConfig:
    """The default sweep configurations the acceptance suite runs."""
    params = {}
    epsilons = list(DEFAULT_EPSILONS)
    if problem == "localized":
        # x1 off the midpoint: at exactly one half the reflection symmetry
        # pins the attractor to the diagonal and every attractor distance
        # collapses to the sampling floor, measuring nothing
        params = {"lam": 0.1, "a1": 1.0, "l1": 1.0, "x1": 0.4}
        # the contraction ledger certifies the graph only once the gap is
        # wide enough, which skips the largest epsilons; a sixth point keeps
        # the fits on at least four values
        epsilons = epsilons + [0.00625]
    elif problem == "homogenization":
        params = {"lam": 1.0, "v0": -0.5, "v_drift": 0.5}
    elif problem == "synthetic":
        params = {"n_dim": 2, "tail_dim": 16, "tail_scale": 1e18}
    cfg = dict(
        problem=problem,
        params=params,
        epsilons=epsilons,
        output_dir=output_dir or f"runs/{problem}",
    )
    cfg.update(overrides)
    return SweepConfig(**cfg)
