"""European call prices from the fitted limit law.

``raw`` prices keep ``log a[t0, T]`` (the drift-carrying expectation ratio)
in the formulas; ``fair`` prices replace it by the risk-neutral translation.
The buyer figure is only a lower bound and is labelled as such throughout.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .diagnostics import DiagnosticsConfig, DiagnosticsReport, diagnose
from .experiment import TRADER, finite_n_price, to_densities
from .limit_law import (
    LimitLaw,
    TranslationSpec,
    _phi_ratio,
    estimate_limit_law,
    poisson_component_law,
    sample_poisson_component,
    translation_spec,
)
from .market_sim import PathEnsemble

MODES = ("raw", "fair")


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Quote:
    s_t0: float
    X: float
    r: float
    delta_t: float
    log_a: float
    sigma2_interval: float
    trader_price: float
    buyer_lower_bound: float
    fair_trader_price: float
    fair_buyer_lower_bound: float
    mode: str
    fair_log_a: float
    d1: float | None = None
    d2: float | None = None
    law: LimitLaw | None = field(default=None, repr=False)

    @property
    def price(self) -> float:
        return self.fair_trader_price if self.mode == "fair" else self.trader_price

    @property
    def effective_log_a(self) -> float:
        return self.fair_log_a if self.mode == "fair" else self.log_a

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "law"}
        d["law"] = None if self.law is None else self.law.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _calm_legs(s, X, disc, sig, A):
    """Trader price and buyer bound for one value of the log-a slot."""
    s2 = sig * sig
    num1 = math.log(s / X) + A + 0.5 * s2
    if sig > 0:
        d1 = num1 / sig
        d2 = d1 - sig
        trader = s * _phi_ratio(num1, sig) - X * disc * _phi_ratio(num1 - s2, sig)
        buyer = s * math.exp(s2) * _phi_ratio(num1 + s2, sig) - X * disc * _phi_ratio(num1, sig)
        return float(trader), float(buyer), d1, d2
    val = float(_phi_ratio(num1, 0.0)) * (s - X * disc)
    return val, val, None, None


def price_calm(s: float, X: float, r: float, delta_t: float, sigma2_interval: float,
               log_a: float, mode: str = "fair") -> Quote:
    """Closed-form trader price and buyer lower bound under a normal limit law.

    Trader: ``s Phi(d1) - X e^{-r dt} Phi(d2)`` with
    ``d1 = (log(s/X) + A + sigma^2/2) / sigma``, ``d2 = d1 - sigma``.
    Buyer bound: ``s e^{sigma^2} Phi(d1 + sigma) - X e^{-r dt} Phi(d1)``.
    ``A`` is ``log_a`` (raw) or ``r * delta_t`` (fair).
    """
    _check_mode(mode)
    if not (s > 0 and X > 0):
        raise ValueError(f"spot and strike must be > 0, got s={s}, X={X}")
    if not sigma2_interval >= 0:
        raise ValueError(f"sigma2_interval must be >= 0, got {sigma2_interval}")
    sig = math.sqrt(sigma2_interval)
    disc = math.exp(-r * delta_t)
    fair_a = r * delta_t
    t_raw, b_raw, d1r, d2r = _calm_legs(s, X, disc, sig, log_a)
    t_fair, b_fair, d1f, d2f = _calm_legs(s, X, disc, sig, fair_a)
    d1, d2 = (d1f, d2f) if mode == "fair" else (d1r, d2r)
    return Quote(s, X, r, delta_t, log_a, sigma2_interval, max(t_raw, 0.0), max(b_raw, 0.0),
                 max(t_fair, 0.0), max(b_fair, 0.0), mode, fair_a, d1, d2,
                 LimitLaw.calm(sigma2_interval))


def _noncalm_legs(s, X, disc, law, A, cp0, cpT):
    mu = law.mu_interval
    s2 = law.sigma2_interval
    sig = law.sigma_interval
    ell = math.log(s / X)
    share_prob = float(np.dot(cpT.probs, _phi_ratio(ell + A - mu + cpT.values, sig)))
    strike_prob = float(np.dot(cp0.probs, _phi_ratio(ell + A + mu + cp0.values, sig)))
    trader = s * share_prob - X * disc * strike_prob
    tilt = math.exp(-mu + 0.5 * s2)
    buyer_share = s * tilt * float(np.dot(
        cpT.probs * np.exp(cpT.values), _phi_ratio(ell + A - mu + s2 + cpT.values, sig)))
    buyer = buyer_share - X * disc * share_prob
    return trader, buyer


def price_noncalm(s: float, X: float, r: float, delta_t: float, law: LimitLaw, log_a: float,
                  mode: str = "fair", tail_tol: float = 1e-12) -> Quote:
    """Mixture price under a normal + compound-Poisson limit law.

    The share leg integrates against the buyer-side Poisson law, the strike
    leg against the trader-side one. In fair mode ``log_a`` is replaced by
    ``r dt - mu_interval - sigma2_interval/2 - log M_T(1)``.
    """
    _check_mode(mode)
    if not (s > 0 and X > 0):
        raise ValueError(f"spot and strike must be > 0, got s={s}, X={X}")
    cp0 = poisson_component_law(law.atoms_t0, tail_tol, "t0")
    cpT = poisson_component_law(law.atoms_T, tail_tol, "T")
    disc = math.exp(-r * delta_t)
    fair_a = translation_spec(law, r, delta_t, log_a, tail_tol).replacement
    t_raw, b_raw = _noncalm_legs(s, X, disc, law, log_a, cp0, cpT)
    t_fair, b_fair = _noncalm_legs(s, X, disc, law, fair_a, cp0, cpT)
    d1 = d2 = None
    if law.is_calm and law.sigma_interval > 0:
        A = fair_a if mode == "fair" else log_a
        d1 = (math.log(s / X) + A - law.mu_interval) / law.sigma_interval
        d2 = d1 - law.sigma_interval
    return Quote(s, X, r, delta_t, log_a, law.sigma2_interval, max(t_raw, 0.0),
                 max(b_raw, 0.0), max(t_fair, 0.0), max(b_fair, 0.0), mode, fair_a,
                 d1, d2, law)


def strike_probabilities(quote: Quote, tail_tol: float = 1e-12) -> tuple[float, float]:
    """Limit probabilities of finishing in the money for the trader and the buyer."""
    law = quote.law if quote.law is not None else LimitLaw.calm(quote.sigma2_interval)
    A = quote.effective_log_a
    ell = math.log(quote.s_t0 / quote.X)
    cp0 = poisson_component_law(law.atoms_t0, tail_tol, "t0")
    cpT = poisson_component_law(law.atoms_T, tail_tol, "T")
    sig = law.sigma_interval
    mu = law.mu_interval
    p_trader = float(np.dot(cp0.probs, _phi_ratio(ell + A + mu + cp0.values, sig)))
    p_buyer = float(np.dot(cpT.probs, _phi_ratio(ell + A - mu + cpT.values, sig)))
    return p_trader, p_buyer


# oracles --------------------------------------------------------------------

def _Phi(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def oracle_bsm(s: float, X: float, r: float, sigma_total: float, delta_t: float) -> float:
    """Textbook Black-Scholes-Merton call; ``sigma_total`` is ``sigma * sqrt(dt)``."""
    if not (s > 0 and X >= 0 and sigma_total >= 0 and delta_t >= 0):
        raise ValueError("oracle_bsm needs nonnegative inputs and s > 0")
    disc = math.exp(-r * delta_t)
    if X == 0:
        return s
    fwd = math.log(s / X) + r * delta_t
    if sigma_total == 0:
        return max(s - X * disc, 0.0)
    d1 = (fwd + 0.5 * sigma_total**2) / sigma_total
    return s * _Phi(d1) - X * disc * _Phi(d1 - sigma_total)


def _tail_prob(threshold: float, sigma: float, epsabs: float) -> float:
    """``P(sigma Z > threshold)`` by adaptive quadrature of the normal density."""
    if sigma == 0:
        return 1.0 if threshold < 0 else (0.5 if threshold == 0 else 0.0)
    z0 = threshold / sigma
    dens = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if z0 > 40:
        return 0.0
    if z0 < -40:
        z0 = -40.0
    val, err = integrate.quad(dens, z0, 40.0, epsabs=epsabs, epsrel=0.0, limit=200)
    if err > 10 * epsabs:
        raise QuadratureError(f"normal tail quadrature did not converge (err={err:.3g})")
    return val


def oracle_quadrature_price(law: LimitLaw, translation: TranslationSpec, s: float, X: float,
                            r: float, delta_t: float, epsabs: float = 1e-11,
                            tail_tol: float = 1e-12) -> float:
    """Fair call price by direct integration of the payoff decomposition.

    Share leg: ``s P_B(V > log(X/s))`` with ``V = A + sigma Z - mu + y``,
    ``y`` from the buyer-side Poisson law. Strike leg:
    ``X e^{-r dt} P_Tr(V > log(X/s))`` with ``V = A + sigma Z + mu + y``, ``y``
    from the trader side. ``A`` is the translation's replacement for
    ``log a``. The normal part is integrated numerically, the Poisson part
    summed exactly.
    """
    A = translation.replacement
    mu = law.mu_interval
    sig = law.sigma_interval
    k = math.log(X / s)
    cp0 = poisson_component_law(law.atoms_t0, tail_tol, "t0")
    cpT = poisson_component_law(law.atoms_T, tail_tol, "T")
    share = sum(p * _tail_prob(k - A + mu - y, sig, epsabs) for y, p in zip(cpT.values, cpT.probs))
    strike = sum(p * _tail_prob(k - A - mu - y, sig, epsabs) for y, p in zip(cp0.values, cp0.probs))
    return max(s * share - X * math.exp(-r * delta_t) * strike, 0.0)


def mc_price(law: LimitLaw, translation: TranslationSpec, s: float, X: float, r: float,
             delta_t: float, n_draws: int = 10_000_000, seed: int = 0,
             chunk: int = 1_000_000) -> tuple[float, float]:
    """Monte-Carlo of the same decomposition with directly simulated Poisson counts.

    Returns ``(price, standard_error)``.
    """
    rng = np.random.default_rng(seed)
    A = translation.replacement
    mu = law.mu_interval
    sig = law.sigma_interval
    k = math.log(X / s)
    disc = math.exp(-r * delta_t)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        vb = A - mu + sig * rng.standard_normal(m) + sample_poisson_component(law.atoms_T, m, rng, "T")
        vt = A + mu + sig * rng.standard_normal(m) + sample_poisson_component(law.atoms_t0, m, rng, "t0")
        x = s * (vb > k) - X * disc * (vt > k)
        total += float(x.sum())
        total_sq += float(np.dot(x, x))
        done += m
    mean = total / n_draws
    var = (total_sq - n_draws * mean * mean) / (n_draws - 1)
    return mean, math.sqrt(max(var, 0.0) / n_draws)


# pipeline ---------------------------------------------------------------------

@dataclass
class PricingConfig:
    strikes: tuple = (80.0, 100.0, 120.0)
    r: float = 0.05
    mode: str = "fair"
    tau: float = 0.05
    convergence_k: tuple = (16, 64, 256)
    force_calm: bool = False
    n_draws: int | None = None
    seed: int = 0
    s_t0: float | None = None


@dataclass
class ConvergenceRow:
    k_n: int
    n_paths: int
    finite_n_price: float
    limit_price: float
    oracle_price: float
    rel_err: float


@dataclass
class PipelineResult:
    quotes: list
    p2_quotes: list
    law: LimitLaw
    law_p2: LimitLaw
    translation: TranslationSpec
    diagnostics: DiagnosticsReport
    calm_branch: bool
    convergence: list
    oracle_prices: list
    warnings: list

    def to_dict(self) -> dict:
        return {
            "calm_branch": self.calm_branch,
            "quotes": [q.to_dict() for q in self.quotes],
            "p2_quotes": [q.to_dict() for q in self.p2_quotes],
            "law": self.law.to_dict(),
            "law_p2": self.law_p2.to_dict(),
            "translation": asdict(self.translation) | {"replacement": self.translation.replacement},
            "oracle_prices": self.oracle_prices,
            "convergence": [asdict(r) for r in self.convergence],
            "diagnostics_verdicts": self.diagnostics.verdicts,
            "warnings": self.warnings,
        }

    def convergence_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k_n", "n_paths", "finite_n_price", "limit_price", "oracle_price", "rel_err"])
            for row in self.convergence:
                w.writerow([row.k_n, row.n_paths, f"{row.finite_n_price:.10g}",
                            f"{row.limit_price:.10g}", f"{row.oracle_price:.10g}",
                            f"{row.rel_err:.10g}"])


def quote_from_law(law: LimitLaw, calm: bool, s: float, X: float, r: float, delta_t: float,
                   log_a: float, mode: str) -> Quote:
    if calm:
        return price_calm(s, X, r, delta_t, law.sigma2_interval, log_a, mode)
    return price_noncalm(s, X, r, delta_t, law, log_a, mode)


def _oracle(ensemble: PathEnsemble, law: LimitLaw, translation: TranslationSpec, s, X, r, dt,
            tail_tol: float = 1e-8):
    # the quadrature oracle costs one integral per support point; fitted laws
    # with many small atoms need the looser tail budget to stay fast
    tag = ensemble.model_tag
    if tag.get("model") == "gbm":
        return oracle_bsm(s, X, r, tag["sigma"] * math.sqrt(dt), dt)
    return oracle_quadrature_price(law, translation, s, X, r, dt, tail_tol=tail_tol)


def pricing_pipeline(ensemble: PathEnsemble, config: PricingConfig | None = None,
                     diag_config: DiagnosticsConfig | None = None) -> PipelineResult:
    """Densities, diagnostics, limit law, translation and quotes for each strike.

    Also prices the P2 variant and a convergence table of finite-n trader
    prices on coarser subsamples of the mesh.
    """
    cfg = config or PricingConfig()
    _check_mode(cfg.mode)
    if not np.all(ensemble.prices > 0):
        raise ValueError("A1 violated: prices must be strictly positive")
    notes = []
    exp = to_densities(ensemble)
    report = diagnose(ensemble, diag_config or DiagnosticsConfig(tau=cfg.tau), exp=exp)
    law = estimate_limit_law(exp, cfg.tau)
    law_p2 = estimate_limit_law(exp, cfg.tau, variant="P2")
    calm_verdict = report.verdicts["calm"]
    if calm_verdict is None:
        calm_verdict = law.is_calm
        notes.append("calm verdict unavailable; using absence of fitted atoms")
    calm = calm_verdict
    if cfg.force_calm and not calm_verdict:
        msg = "calm branch forced but diagnostics reject calmness; non-calm branch recommended"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
        calm = True
    elif not calm_verdict:
        notes.append("diagnostics reject calmness; using non-calm branch")
    mesh = ensemble.mesh
    dt = mesh.T - mesh.t0
    s = float(cfg.s_t0 if cfg.s_t0 is not None else ensemble.prices[0, 0])
    log_a = math.log(exp.a_factor)
    translation = translation_spec(law, cfg.r, dt, log_a)
    quotes, p2_quotes, oracles = [], [], []
    for X in cfg.strikes:
        quotes.append(quote_from_law(law, calm, s, X, cfg.r, dt, log_a, cfg.mode))
        p2_quotes.append(quote_from_law(law_p2, calm, s, X, cfg.r, dt, log_a, cfg.mode))
        oracles.append(_oracle(ensemble, law, translation, s, X, cfg.r, dt))

    rows = []
    X_ref = cfg.strikes[len(cfg.strikes) // 2]
    for k_sub in cfg.convergence_k:
        if k_sub > mesh.k or mesh.k % k_sub:
            notes.append(f"convergence row k={k_sub} skipped (does not divide k={mesh.k})")
            continue
        sub = ensemble.subsample(mesh.k // k_sub) if k_sub != mesh.k else ensemble
        sub_exp = to_densities(sub) if k_sub != mesh.k else exp
        sub_law = estimate_limit_law(sub_exp, cfg.tau)
        sub_tr = translation_spec(sub_law, cfg.r, dt, log_a)
        A = sub_tr.replacement if cfg.mode == "fair" else log_a
        fin = finite_n_price(sub_exp, TRADER, s, X_ref, cfg.r, log_a=A,
                             n_draws=cfg.n_draws, seed=cfg.seed)
        lim = quote_from_law(sub_law, calm, s, X_ref, cfg.r, dt, log_a, cfg.mode).price
        orc = _oracle(sub, sub_law, sub_tr, s, X_ref, cfg.r, dt)
        rows.append(ConvergenceRow(k_sub, sub.n_paths, fin.price, lim, orc,
                                   abs(lim - orc) / orc if orc else float("nan")))
        del sub_exp
    return PipelineResult(quotes, p2_quotes, law, law_p2, translation, report, calm, rows,
                          oracles, notes)
