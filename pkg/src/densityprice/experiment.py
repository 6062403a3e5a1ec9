"""Prices-densities and the trader/buyer strategy expectations built on them.

The physical measure is the empirical measure over paths and ``ES_t`` is the
cross-path sample mean, so every column of densities has mean exactly one.
Interval ``j`` (1-based, ``1 <= j <= k``) runs from ``times[j-1]`` to
``times[j]``; the trader weights it by ``p_{t_{j-1}}``, the buyer by
``p_{t_j}``.
"""

from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import stats

from .market_sim import Mesh, PathEnsemble


class StrategyTag(enum.Enum):
    TRADER = "trader"
    BUYER = "buyer"


TRADER = StrategyTag.TRADER
BUYER = StrategyTag.BUYER


def _tag(tag) -> StrategyTag:
    return tag if isinstance(tag, StrategyTag) else StrategyTag(str(tag).lower())


def column_blocks(n_rows: int, n_cols: int, budget: int = 1 << 23):
    """Column slices whose row-by-column size stays under ``budget`` cells."""
    step = max(1, budget // max(n_rows, 1))
    for a in range(0, n_cols, step):
        yield slice(a, min(a + step, n_cols))


class DensityExperiment:
    """Prices-densities of an ensemble plus the increments derived from them.

    Attributes
    ----------
    mesh : Mesh
    p : ndarray, shape (n_paths, k + 1)
        ``S / ES`` per column.
    es : ndarray, shape (k + 1,)
        Cross-path mean price at each transaction time.
    a_factor : float
        ``ES_T / ES_t0``.
    s_t0 : ndarray
        Observed prices at ``t0``, kept for the independence diagnostic.
    """

    def __init__(self, mesh: Mesh, p: np.ndarray, es: np.ndarray, s_t0: np.ndarray):
        self.mesh = mesh
        self.p = p
        self.es = es
        self.s_t0 = s_t0
        self.a_factor = float(es[-1] / es[0])
        self.single_path = p.shape[0] == 1
        p.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.p.shape[0]

    @property
    def k(self) -> int:
        return self.mesh.k

    @cached_property
    def Y(self) -> np.ndarray:
        """``sqrt(p_j / p_{j-1}) - 1``, shape (n_paths, k)."""
        y = np.divide(self.p[:, 1:], self.p[:, :-1])
        np.sqrt(y, out=y)
        y -= 1.0
        y.setflags(write=False)
        return y

    @property
    def U(self) -> np.ndarray:
        """``sqrt(p_{j-1} / p_j) - 1``; recomputed on each access to save memory."""
        u = np.divide(self.p[:, :-1], self.p[:, 1:])
        np.sqrt(u, out=u)
        u -= 1.0
        return u

    def log_ratio(self, cols: slice | None = None) -> np.ndarray:
        """``log(p_j / p_{j-1})`` for the requested interval columns (0-based)."""
        cols = slice(None) if cols is None else cols
        return 2.0 * np.log1p(self.Y[:, cols])

    def weights(self, tag) -> np.ndarray:
        """Per-interval strategy weights, shape (n_paths, k); columns have mean 1."""
        return self.p[:, :-1] if _tag(tag) is TRADER else self.p[:, 1:]

    def increments(self, side: str) -> np.ndarray:
        return self.Y if side.upper() == "Y" else self.U


def to_densities(ensemble: PathEnsemble) -> DensityExperiment:
    """Divide each price column by its cross-path mean."""
    S = ensemble.prices
    if np.isnan(S).any():
        raise ValueError("ensemble contains NaN prices")
    es = S.mean(axis=0)
    if not np.all(es > 0):
        raise ValueError("non-positive column mean; prices must be positive")
    p = S / es
    if S.shape[0] == 1:
        warnings.warn("single-path ensemble: densities are identically 1", stacklevel=2)
        p = np.ones_like(S)
    return DensityExperiment(ensemble.mesh, p, es, S[:, 0].copy())


def _check_interval(exp: DensityExperiment, j: int) -> None:
    if not 1 <= j <= exp.k:
        raise IndexError(f"interval index {j} outside 1..{exp.k}")


def forward_expect(exp: DensityExperiment, j: int, f, tag=TRADER,
                   normalize: bool = True) -> float:
    """Empirical expectation of ``f`` for interval ``j`` under the tagged weights.

    ``f`` is either an array of per-path values or a callable ``f(exp, j)``
    returning one. With ``normalize`` the weighted sum is divided by the
    weight sum (self-normalized); otherwise by the number of paths.
    """
    _check_interval(exp, j)
    vals = f(exp, j) if callable(f) else f
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (exp.n_paths,))
    w = exp.weights(tag)[:, j - 1]
    total = float(np.dot(w, vals))
    return total / float(w.sum()) if normalize else total / exp.n_paths


def interval_expect(exp: DensityExperiment, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                    tag=TRADER, side: str = "Y") -> np.ndarray:
    """Per-interval weighted means of ``fn(inc, w)`` evaluated blockwise.

    ``fn`` receives a block of increments (Y or U) and must return an array
    of the same shape; the result has one entry per interval.
    """
    tag = _tag(tag)
    out = np.empty(exp.k)
    W = exp.weights(tag)
    n = exp.n_paths
    for cols in column_blocks(n, exp.k):
        if side.upper() == "Y":
            inc = exp.Y[:, cols]
        else:
            lo, hi = cols.start, cols.stop
            inc = np.sqrt(exp.p[:, lo:hi] / exp.p[:, lo + 1:hi + 1]) - 1.0
        w = W[:, cols]
        out[cols] = np.einsum("ij,ij->j", w, fn(inc)) / w.sum(axis=0)
    return out


def lambda_per_path(exp: DensityExperiment) -> np.ndarray:
    """``2 * sum_j log(1 + Y_j)`` per path, which telescopes to ``log(p_T / p_t0)``."""
    out = np.zeros(exp.n_paths)
    for cols in column_blocks(exp.n_paths, exp.k):
        out += 2.0 * np.log1p(exp.Y[:, cols]).sum(axis=1)
    return out


def lambda_direct(exp: DensityExperiment) -> np.ndarray:
    return np.log(exp.p[:, -1] / exp.p[:, 0])


# strategy-weighted laws of Λ -------------------------------------------------

def _intervals(exp: DensityExperiment, variant: str) -> range:
    variant = variant.upper()
    if variant == "P1":
        return range(exp.k)
    if variant == "P2":
        if exp.k < 2:
            raise ValueError("P2 variant needs at least two intervals")
        return range(1, exp.k)
    raise ValueError(f"unknown variant {variant!r} (expected 'P1' or 'P2')")


def sample_lambda(exp: DensityExperiment, tag=TRADER, n_draws: int | None = None,
                  seed: int = 0, variant: str = "P1") -> np.ndarray:
    """Draws of Λ under the product strategy measure.

    Each interval is an independent coordinate: a path index is drawn with
    probability proportional to that interval's strategy weight and its log
    ratio for the interval is added. ``variant='P2'`` omits interval 1.
    """
    n_draws = exp.n_paths if n_draws is None else int(n_draws)
    rng = np.random.default_rng(seed)
    W = exp.weights(tag)
    out = np.zeros(n_draws)
    for j in _intervals(exp, variant):
        cdf = np.cumsum(W[:, j])
        idx = np.searchsorted(cdf, rng.random(n_draws) * cdf[-1], side="right")
        np.minimum(idx, exp.n_paths - 1, out=idx)
        out += 2.0 * np.log1p(exp.Y[idx, j])
    return out


def product_log_weights(exp: DensityExperiment, tag=TRADER, variant: str = "P1") -> np.ndarray:
    """Per-path ``log prod_j w_j`` for the single-path product weighting."""
    W = exp.weights(tag)
    js = list(_intervals(exp, variant))
    return np.log(W[:, js]).sum(axis=1)


def effective_sample_size(log_w: np.ndarray) -> float:
    w = np.exp(log_w - log_w.max())
    return float(w.sum() ** 2 / np.dot(w, w))


@dataclass(frozen=True)
class StepCDF:
    """Weighted step cdf; ``warning`` is set when the effective sample size is low."""

    values: np.ndarray
    cum: np.ndarray
    ess: float
    warning: str | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.values, x, side="right")
        cum = np.concatenate([[0.0], self.cum])
        return cum[idx]

    def ks_distance(self, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
        """Kolmogorov distance to a continuous cdf."""
        F = cdf(self.values)
        below = np.concatenate([[0.0], self.cum[:-1]])
        return float(max(np.max(np.abs(self.cum - F)), np.max(np.abs(F - below))))


def empirical_cdf(exp: DensityExperiment, tag=TRADER, method: str = "resample",
                  n_draws: int | None = None, seed: int = 0, variant: str = "P1",
                  ess_floor: float = 100.0) -> StepCDF:
    """Step cdf of Λ under the trader or buyer strategy.

    ``method='resample'`` samples the product measure interval by interval;
    ``method='product'`` weights each whole path by ``prod_j w_j`` with
    self-normalized importance weights.
    """
    if method == "resample":
        vals = np.sort(sample_lambda(exp, tag, n_draws, seed, variant))
        w = np.full(vals.size, 1.0 / vals.size)
        ess = float(vals.size)
    elif method == "product":
        lam = lambda_per_path(exp) if variant.upper() == "P1" else \
            2.0 * np.log1p(exp.Y[:, 1:]).sum(axis=1)
        log_w = product_log_weights(exp, tag, variant)
        order = np.argsort(lam)
        vals = lam[order]
        w = np.exp(log_w - log_w.max())[order]
        w /= w.sum()
        ess = effective_sample_size(log_w)
    else:
        raise ValueError(f"unknown method {method!r}")
    cum = np.cumsum(w)
    cum[-1] = 1.0
    warning = None
    if ess < min(ess_floor, exp.n_paths):
        warning = f"effective sample size {ess:.1f} below floor {ess_floor}"
        warnings.warn(warning, stacklevel=2)
    return StepCDF(vals, cum, ess, warning)


# martingale property ---------------------------------------------------------

@dataclass(frozen=True)
class MartingaleCheck:
    deviations: np.ndarray
    max_deviation: float


def martingale_check(exp: DensityExperiment, normalize: bool = False) -> MartingaleCheck:
    """``|E_{P_{t_{j-1}}}[p_j / p_{j-1}] - 1|`` per interval.

    Raw weights by default: the trader-weighted ratio is then the column mean
    of ``p_j``, so the identity holds to rounding.
    """
    dev = np.empty(exp.k)
    for j in range(1, exp.k + 1):
        ratio = exp.p[:, j] / exp.p[:, j - 1]
        dev[j - 1] = abs(forward_expect(exp, j, ratio, TRADER, normalize=normalize) - 1.0)
    return MartingaleCheck(dev, float(dev.max()))


def holdout_martingale_check(ensemble: PathEnsemble) -> MartingaleCheck:
    """Densities normalized with half A's column means, evaluated on half B."""
    a, b = ensemble.split()
    es_a = a.prices.mean(axis=0)
    pb = b.prices / es_a
    dev = np.abs(np.mean(pb[:, :-1] * (pb[:, 1:] / pb[:, :-1]), axis=0) - 1.0)
    return MartingaleCheck(dev, float(dev.max()))


# finite-n prices -----------------------------------------------------------

@dataclass(frozen=True)
class FiniteNPrice:
    price: float
    std_error: float
    degenerate: bool
    log_a: float
    delta_t: float


def finite_n_price(exp: DensityExperiment, tag, s_t0: float, X: float, r: float,
                   variant: str = "P1", log_a: float | None = None,
                   n_draws: int | None = None, seed: int = 0) -> FiniteNPrice:
    """Call price from strategy draws of ``M = prod p_{t_j} / p_{t_{j-1}}``.

    Evaluates ``E[s M I(M > X / (s a))] - X exp(-r dt) E[I(...)]``. ``log_a``
    defaults to the in-sample ``log a[t0, T]`` (``log a[t1, T]`` for P2); pass
    the risk-neutral replacement to get the fair price.
    """
    if not X > 0:
        raise ValueError(f"strike must be > 0, got {X}")
    variant = variant.upper()
    first = 0 if variant == "P1" else 1
    if log_a is None:
        log_a = float(np.log(exp.es[-1] / exp.es[first]))
    delta_t = float(exp.mesh.T - exp.mesh.times[first])
    lam = sample_lambda(exp, tag, n_draws, seed, variant)
    itm = lam > np.log(X / s_t0) - log_a
    if not itm.any():
        return FiniteNPrice(0.0, 0.0, True, log_a, delta_t)
    payoff = np.where(itm, s_t0 * np.exp(lam) - X * np.exp(-r * delta_t), 0.0)
    price = float(payoff.mean())
    se = float(payoff.std(ddof=1) / np.sqrt(payoff.size)) if payoff.size > 1 else 0.0
    return FiniteNPrice(price, se, False, log_a, delta_t)


# summaries -----------------------------------------------------------------

def experiment_summary(exp: DensityExperiment) -> dict:
    """Per-interval moment estimates and weight diagnostics."""
    ey = interval_expect(exp, lambda y: y)
    ey2 = interval_expect(exp, np.square)
    W = exp.weights(TRADER)
    ess = W.sum(axis=0) ** 2 / np.einsum("ij,ij->j", W, W)
    # rank correlation of the mid-mesh level with the following interval's ratio
    m = exp.k // 2
    if m >= 1 and exp.n_paths > 2:
        level = exp.p[:, m]
        ratio = exp.p[:, m + 1] / level
        a5 = float(stats.spearmanr(level, ratio).statistic) \
            if np.ptp(level) > 0 and np.ptp(ratio) > 0 else float("nan")
    else:
        a5 = float("nan")
    return {
        "k": exp.k, "n_paths": exp.n_paths, "a_factor": exp.a_factor,
        "a5_rank_corr": a5,
        "intervals": [
            {"j": j + 1, "t_start": float(exp.mesh.times[j]), "t_end": float(exp.mesh.times[j + 1]),
             "h2": 0.5 * float(ey2[j]), "EY": float(ey[j]), "EY2": float(ey2[j]),
             "trader_weight_ess": float(ess[j])}
            for j in range(exp.k)
        ],
    }


def write_summary_csv(summary: dict, path) -> None:
    rows = summary["intervals"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
