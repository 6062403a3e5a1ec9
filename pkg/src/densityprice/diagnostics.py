"""Data-driven checks of the modeling assumptions.

Everything here is a threshold-based engineering check on a finite ensemble,
not a hypothesis test. Thresholds travel with the report so every verdict can
be re-derived from the numbers next to it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .experiment import BUYER, TRADER, DensityExperiment, column_blocks, interval_expect, to_densities
from .market_sim import PathEnsemble

DEFAULT_EPS_GRID = (0.2, 0.1, 0.05, 0.02, 0.01)
SANDWICH_EPS_CEILING = 0.2


@dataclass(frozen=True)
class HellingerProfile:
    h2: np.ndarray
    std_error: np.ndarray
    sup_h2: float
    sum_2h2: float


def hellinger_profile(exp: DensityExperiment) -> HellingerProfile:
    """Per-interval squared Hellinger distances ``h2_j = E_{P_{t_{j-1}}} Y_j^2 / 2``."""
    h2 = 0.5 * interval_expect(exp, np.square, TRADER)
    se = np.empty(exp.k)
    W = exp.weights(TRADER)
    for cols in column_blocks(exp.n_paths, exp.k):
        wy2 = 0.5 * W[:, cols] * exp.Y[:, cols] ** 2
        se[cols] = wy2.std(axis=0, ddof=1) / np.sqrt(exp.n_paths) if exp.n_paths > 1 else 0.0
    return HellingerProfile(h2, se, float(h2.max()), float(2.0 * h2.sum()))


def lindeberg_curve(exp: DensityExperiment, eps_grid, side: str = "Y") -> np.ndarray:
    """Lindeberg sums ``sum_j E[inc^2 I(|inc| > eps)]`` for each eps.

    ``side='Y'`` uses the trader weights, ``side='U'`` the buyer weights.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    if np.any(eps_grid < 0):
        raise ValueError("eps must be nonnegative")
    side = side.upper()
    W = exp.weights(TRADER if side == "Y" else BUYER)
    out = np.zeros(eps_grid.size)
    for cols in column_blocks(exp.n_paths, exp.k):
        if side == "Y":
            inc = exp.Y[:, cols]
        else:
            lo, hi = cols.start, cols.stop
            inc = np.sqrt(exp.p[:, lo:hi] / exp.p[:, lo + 1:hi + 1]) - 1.0
        w = W[:, cols]
        wsq = w * inc * inc / w.sum(axis=0)
        absinc = np.abs(inc)
        for e_idx, eps in enumerate(eps_grid):
            out[e_idx] += wsq[absinc > eps].sum()
    return out


def lindeberg_sum(exp: DensityExperiment, eps: float, side: str = "Y") -> float:
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    return float(lindeberg_curve(exp, [eps], side)[0])


@dataclass(frozen=True)
class SandwichCheck:
    holds: bool
    y_sum_wide: float
    u_sum_mid: float
    y_sum_eps: float


def yu_sandwich_check(exp: DensityExperiment, eps: float, rtol: float = 1e-10) -> SandwichCheck:
    """Check ``Y(eps/(1-2eps)) <= U(eps/(1-eps)) <= Y(eps)`` for the Lindeberg sums."""
    if not 0 < eps <= SANDWICH_EPS_CEILING:
        raise ValueError(f"eps must be in (0, {SANDWICH_EPS_CEILING}], got {eps}")
    lo = float(lindeberg_curve(exp, [eps / (1 - 2 * eps)], "Y")[0])
    mid = float(lindeberg_curve(exp, [eps / (1 - eps)], "U")[0])
    hi = float(lindeberg_curve(exp, [eps], "Y")[0])
    slack = rtol * max(hi, 1e-300)
    holds = lo <= mid + slack and mid <= hi + slack
    return SandwichCheck(holds, lo, mid, hi)


@dataclass(frozen=True)
class UANCheck:
    sup_per_path: np.ndarray
    median_sup: float
    thresholds: np.ndarray
    exceed_prob: np.ndarray


def uan_check(exp: DensityExperiment, thresholds=(0.2, 0.1, 0.05, 0.02, 0.01)) -> UANCheck:
    """Largest ``|Y_j|`` per path, and trader-measure probabilities that it exceeds each threshold.

    Under the product strategy measure the coordinates are independent, so
    ``P(sup |Y| <= c) = prod_j P_{t_{j-1}}(|Y_j| <= c)``.
    """
    thresholds = np.asarray(thresholds, dtype=float)
    sup = np.zeros(exp.n_paths)
    log_keep = np.zeros(thresholds.size)
    W = exp.weights(TRADER)
    for cols in column_blocks(exp.n_paths, exp.k):
        a = np.abs(exp.Y[:, cols])
        np.maximum(sup, a.max(axis=1), out=sup)
        w = W[:, cols]
        wsum = w.sum(axis=0)
        for t_idx, c in enumerate(thresholds):
            frac = np.einsum("ij,ij->j", w, a <= c) / wsum
            with np.errstate(divide="ignore"):
                log_keep[t_idx] += np.log(np.clip(frac, 0.0, 1.0)).sum()
    return UANCheck(sup, float(np.median(sup)), thresholds, 1.0 - np.exp(log_keep))


@dataclass(frozen=True)
class ContiguityReport:
    variance_match: float
    truncated_gap: float
    levy_neg1_mass: float
    tau: float
    margin: float
    threshold: float
    buyer_contiguous_to_trader: bool
    trader_contiguous_to_buyer: bool


def contiguity_report(exp: DensityExperiment, tau: float = 0.05, margin: float = 1e-3,
                      threshold: float = 1e-3) -> ContiguityReport:
    """Finite-sample indicators for the two contiguity directions.

    ``variance_match`` compares the summed interval variances with the
    variance of the fitted limit (truncated second moment plus exceedance
    mass); ``truncated_gap`` compares against the truncated part alone.
    ``levy_neg1_mass`` is the Y^2-weighted mass within ``margin`` of -1.
    """
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    ey = interval_expect(exp, lambda y: y)
    ey2 = interval_expect(exp, np.square)
    trunc = interval_expect(exp, lambda y: y * y * (np.abs(y) <= tau))
    total_var = float(np.sum(ey2 - ey**2))
    limit_var = float(trunc.sum() + np.sum(ey2 - trunc))
    neg1 = float(interval_expect(exp, lambda y: y * y * (y <= -1.0 + margin)).sum())
    vm = abs(total_var - limit_var)
    return ContiguityReport(vm, abs(total_var - float(trunc.sum())), neg1, tau, margin,
                            threshold, vm <= threshold, neg1 <= threshold)


# full report ------------------------------------------------------------------

@dataclass
class DiagnosticsConfig:
    eps_grid: tuple = DEFAULT_EPS_GRID
    calm_ratio: float = 0.25
    refine_factor: int = 4
    zero_floor: float = 1e-10
    tau: float = 0.05
    margin: float = 1e-3
    contiguity_threshold: float = 1e-3
    bound_b: float | None = None


@dataclass
class DiagnosticsReport:
    k: int
    k_coarse: int | None
    h2: list
    sup_h2: float
    sum_2h2: float
    bound_b: float
    eps_grid: list
    lindeberg_Y: list
    lindeberg_U: list
    lindeberg_Y_coarse: list | None
    uan_median_sup: float
    uan_thresholds: list
    uan_exceed_prob: list
    variance_match: float
    levy_neg1_mass: float
    verdicts: dict
    thresholds: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def curves_csv(self, path) -> None:
        """Lindeberg-vs-eps curves, one row per eps."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "lindeberg_Y", "lindeberg_U", "lindeberg_Y_coarse"])
            coarse = self.lindeberg_Y_coarse or [float("nan")] * len(self.eps_grid)
            for row in zip(self.eps_grid, self.lindeberg_Y, self.lindeberg_U, coarse):
                w.writerow([f"{v:.10g}" for v in row])


def calm_verdict(fine: np.ndarray, coarse: np.ndarray, ratio: float = 0.25,
                 zero_floor: float = 1e-10) -> np.ndarray:
    """Per-eps calm flags: the refined Lindeberg sum fell below ``ratio`` of the
    coarse one, or there was nothing left to shrink."""
    fine = np.asarray(fine)
    coarse = np.asarray(coarse)
    return (coarse <= zero_floor) & (fine <= zero_floor) | (fine < ratio * coarse)


def diagnose(ensemble: PathEnsemble, config: DiagnosticsConfig | None = None,
             exp: DensityExperiment | None = None) -> DiagnosticsReport:
    """Run every check on ``ensemble`` and on its ``refine_factor``-coarser subsample."""
    cfg = config or DiagnosticsConfig()
    exp = exp or to_densities(ensemble)
    notes = []
    prof = hellinger_profile(exp)
    lin_y = lindeberg_curve(exp, cfg.eps_grid, "Y")
    lin_u = lindeberg_curve(exp, cfg.eps_grid, "U")
    uan = uan_check(exp)
    cont = contiguity_report(exp, cfg.tau, cfg.margin, cfg.contiguity_threshold)

    k_coarse = None
    lin_coarse = None
    calm = None
    a3 = None
    bound_b = cfg.bound_b
    if exp.k % cfg.refine_factor == 0 and exp.k >= cfg.refine_factor:
        coarse_exp = to_densities(ensemble.subsample(cfg.refine_factor))
        k_coarse = coarse_exp.k
        lin_coarse = lindeberg_curve(coarse_exp, cfg.eps_grid, "Y")
        flags = calm_verdict(lin_y, lin_coarse, cfg.calm_ratio, cfg.zero_floor)
        calm = bool(flags.all())
        prof_c = hellinger_profile(coarse_exp)
        if bound_b is None:
            bound_b = 10.0 * prof_c.sum_2h2
        a3 = bool(prof.sum_2h2 <= bound_b and prof.sup_h2 < prof_c.sup_h2)
        del coarse_exp
    else:
        notes.append(f"k={exp.k} not divisible by refine factor {cfg.refine_factor}; "
                     "calm and A3 verdicts unavailable")
        if bound_b is None:
            bound_b = 10.0 * prof.sum_2h2
    y_calm = calm
    u_agrees = bool(np.all((lin_y <= cfg.zero_floor) == (lin_u <= cfg.zero_floor)))
    verdicts = {
        "calm": y_calm,
        "A3": a3,
        "contiguous_both_ways": cont.buyer_contiguous_to_trader and cont.trader_contiguous_to_buyer,
        "yu_sides_agree": u_agrees,
        "calm_per_eps": None if lin_coarse is None else
        [bool(f) for f in calm_verdict(lin_y, lin_coarse, cfg.calm_ratio, cfg.zero_floor)],
    }
    return DiagnosticsReport(
        k=exp.k, k_coarse=k_coarse, h2=prof.h2.tolist(), sup_h2=prof.sup_h2,
        sum_2h2=prof.sum_2h2, bound_b=float(bound_b), eps_grid=list(cfg.eps_grid),
        lindeberg_Y=lin_y.tolist(), lindeberg_U=lin_u.tolist(),
        lindeberg_Y_coarse=None if lin_coarse is None else lin_coarse.tolist(),
        uan_median_sup=uan.median_sup, uan_thresholds=uan.thresholds.tolist(),
        uan_exceed_prob=uan.exceed_prob.tolist(), variance_match=cont.variance_match,
        levy_neg1_mass=cont.levy_neg1_mass, verdicts=verdicts,
        thresholds={"calm_ratio": cfg.calm_ratio, "refine_factor": cfg.refine_factor,
                    "zero_floor": cfg.zero_floor, "tau": cfg.tau, "margin": cfg.margin,
                    "contiguity_threshold": cfg.contiguity_threshold},
        notes=notes,
    )
