"""Infinitely divisible limit law of the log price-density ratio.

The law of Λ under the trader strategy is a normal component with mean
``mu_interval = 2*mu - sigma2`` and variance ``sigma2_interval = 4*sigma2``
plus an independent compound-Poisson component. Atoms are stored on the
increment (Y) scale with their y²-weighted Lévy mass; the Poisson rate of an
atom is ``mass / y**2``.

On the buyer side, ``-Λ`` has the same normal component and its jumps live on
the U scale, ``u = 1/(1+y) - 1``. Atoms for that side are still stored on the Y
scale so both lists share one representation.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .experiment import BUYER, TRADER, DensityExperiment, _intervals, column_blocks, interval_expect


@dataclass(frozen=True)
class Atom:
    y: float
    mass: float

    def __post_init__(self):
        if not self.y >= -1.0:
            raise ValueError(f"atom location must be >= -1, got {self.y}")
        if self.y == 0.0:
            raise ValueError("atom at y=0 carries no jump")
        if not self.mass >= 0:
            raise ValueError(f"atom mass must be >= 0, got {self.mass}")

    @property
    def intensity(self) -> float:
        return self.mass / self.y**2

    @property
    def u(self) -> float:
        """Location on the backward (U) scale."""
        return 1.0 / (1.0 + self.y) - 1.0

    @classmethod
    def from_intensity(cls, y: float, intensity: float) -> "Atom":
        return cls(y, intensity * y * y)


@dataclass(frozen=True)
class LimitLaw:
    """Normal + compound-Poisson law of Λ.

    ``mu`` is the limit of summed increment means, ``sigma2`` the truncated
    second-moment limit; the interval-level moments are derived from them.
    """

    mu: float
    sigma2: float
    atoms_t0: tuple = ()
    atoms_T: tuple = ()
    tau: float = 0.05

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")
        object.__setattr__(self, "atoms_t0", tuple(self.atoms_t0))
        object.__setattr__(self, "atoms_T", tuple(self.atoms_T))

    @property
    def mu_interval(self) -> float:
        return 2.0 * self.mu - self.sigma2

    @property
    def sigma2_interval(self) -> float:
        return 4.0 * self.sigma2

    @property
    def sigma_interval(self) -> float:
        return math.sqrt(self.sigma2_interval)

    @property
    def is_calm(self) -> bool:
        return not self.atoms_t0 and not self.atoms_T

    @classmethod
    def from_interval(cls, mu_interval: float, sigma2_interval: float, atoms_t0=(),
                      atoms_T=(), tau: float = 0.05) -> "LimitLaw":
        sigma2 = sigma2_interval / 4.0
        return cls((mu_interval + sigma2) / 2.0, sigma2, atoms_t0, atoms_T, tau)

    @classmethod
    def calm(cls, sigma2_interval: float, tau: float = 0.05) -> "LimitLaw":
        return cls.from_interval(-0.5 * sigma2_interval, sigma2_interval, tau=tau)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mu_interval"] = self.mu_interval
        d["sigma2_interval"] = self.sigma2_interval
        for key in ("atoms_t0", "atoms_T"):
            d[key] = [dict(a, intensity=a["mass"] / a["y"] ** 2) for a in d[key]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LimitLaw":
        return cls(d["mu"], d["sigma2"],
                   tuple(Atom(a["y"], a["mass"]) for a in d.get("atoms_t0", [])),
                   tuple(Atom(a["y"], a["mass"]) for a in d.get("atoms_T", [])),
                   d.get("tau", 0.05))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LimitLaw":
        return cls.from_dict(json.loads(text))


# estimation -----------------------------------------------------------------

def _cluster(values: np.ndarray, contrib: np.ndarray, width: float, max_atoms: int):
    """Histogram clustering; returns (locations, masses) with at most ``max_atoms`` entries."""
    if values.size == 0:
        return np.empty(0), np.empty(0)
    while True:
        bins = np.floor(values / width).astype(np.int64)
        keys, inv = np.unique(bins, return_inverse=True)
        if keys.size <= max_atoms:
            break
        width *= 2.0
    mass = np.bincount(inv, weights=contrib)
    loc = np.bincount(inv, weights=contrib * values) / mass
    keep = mass > 0
    return loc[keep], mass[keep]


def _exceedances(exp: DensityExperiment, tau: float, side: str, js: list[int]):
    tag = TRADER if side == "Y" else BUYER
    W = exp.weights(tag)
    vals, contrib = [], []
    sel = np.zeros(exp.k, dtype=bool)
    sel[js] = True
    for cols in column_blocks(exp.n_paths, exp.k):
        lo, hi = cols.start, cols.stop
        inc = exp.Y[:, cols] if side == "Y" else \
            np.sqrt(exp.p[:, lo:hi] / exp.p[:, lo + 1:hi + 1]) - 1.0
        w = W[:, cols] / W[:, cols].sum(axis=0)
        mask = (np.abs(inc) > tau) & sel[cols]
        vals.append(inc[mask])
        contrib.append(w[mask] * inc[mask] ** 2)
    return np.concatenate(vals), np.concatenate(contrib)


def estimate_limit_law(exp: DensityExperiment, tau: float = 0.05, variant: str = "P1",
                       max_atoms: int = 16) -> LimitLaw:
    """Fit the limit law from trader-weighted Y and buyer-weighted U increments.

    ``mu`` sums the interval means of Y, ``sigma2`` the truncated second
    moments ``E Y^2 I(|Y| <= tau)``. Exceedances are pooled across intervals
    and binned with width ``tau/2``; each bin becomes one atom whose mass is
    the weighted sum of squares and whose location is the mass-weighted mean.
    ``variant='P2'`` drops the first interval.
    """
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    js = list(_intervals(exp, variant))
    ey = interval_expect(exp, lambda y: y, TRADER)
    trunc = interval_expect(exp, lambda y: y * y * (np.abs(y) <= tau), TRADER)
    mu = float(ey[js].sum())
    sigma2 = float(trunc[js].sum())

    yv, yc = _exceedances(exp, tau, "Y", js)
    loc, mass = _cluster(yv, yc, tau / 2.0, max_atoms)
    atoms_t0 = tuple(Atom(float(a), float(m)) for a, m in zip(loc, mass) if a != 0.0)

    uv, uc = _exceedances(exp, tau, "U", js)
    uloc, umass = _cluster(uv, uc, tau / 2.0, max_atoms)
    atoms_T = []
    for u, m in zip(uloc, umass):
        if u == 0.0 or not np.isfinite(u):
            continue
        y = 1.0 / (1.0 + u) - 1.0
        atoms_T.append(Atom.from_intensity(float(y), float(m / u**2)))
    return LimitLaw(mu, sigma2, atoms_t0, tuple(atoms_T), tau)


def truncation_sensitivity(exp: DensityExperiment, tau: float = 0.05) -> dict:
    """``sigma2_interval`` at ``tau`` and ``tau/2`` with a two-point Richardson estimate."""
    a = estimate_limit_law(exp, tau).sigma2_interval
    b = estimate_limit_law(exp, tau / 2.0).sigma2_interval
    return {"tau": tau, "sigma2_interval": a, "sigma2_interval_half_tau": b,
            "richardson": 2.0 * b - a}


# moment generating function -----------------------------------------------

def _atoms(law: LimitLaw, side: str):
    side = side.lower()
    if side in ("t0", "trader"):
        return law.atoms_t0, False
    if side in ("t", "buyer"):
        return law.atoms_T, True
    raise ValueError(f"unknown side {side!r} (expected 't0' or 'T')")


def mgf_lambda(law: LimitLaw, s: float, side: str = "t0") -> float:
    """Log-mgf ``log E exp(s L)`` for ``s`` in (0, 1).

    ``side='t0'``: ``L`` is Λ under the trader strategy. ``side='T'``: ``L``
    is ``-Λ`` under the buyer strategy, whose jumps sit at the U locations.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    atoms, backward = _atoms(law, side)
    out = (2.0 * law.mu - law.sigma2) * s + 2.0 * law.sigma2 * s * s
    for a in atoms:
        z = a.u if backward else a.y
        out += a.intensity * ((1.0 + z) ** (2.0 * s) - 1.0 - 2.0 * s * z)
    return out


@dataclass(frozen=True)
class CompoundPoissonLaw:
    """Discrete law of the Poisson component's contribution to Λ."""

    values: np.ndarray
    probs: np.ndarray
    tail_mass: float = 0.0
    shift: float = 0.0
    atoms: tuple = field(default=(), repr=False)

    def mgf(self, t: float) -> float:
        return float(np.dot(self.probs, np.exp(t * self.values)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.probs / self.probs.sum()
        return self.values[rng.choice(self.values.size, size=n, p=p)]


def _compensator(atoms, backward: bool) -> float:
    # Λ-scale shift fixed by the -2sy term of the log-mgf
    if backward:
        return sum(2.0 * a.intensity * a.u for a in atoms)
    return -sum(2.0 * a.intensity * a.y for a in atoms)


def poisson_component_law(atoms, tail_tol: float = 1e-10, side: str = "t0") -> CompoundPoissonLaw:
    """Law of ``sum_k N_k * 2 log(1 + y_k) + c`` with independent ``N_k ~ Poisson(rate_k)``.

    ``c`` is the deterministic compensator that makes the represented log-mgf
    match the atom term of :func:`mgf_lambda` for the chosen side. Counts are
    truncated and the smallest outcomes pruned so the discarded probability
    stays below ``tail_tol``. Results are cached; the arrays are read-only.
    """
    if not 0 < tail_tol < 1:
        raise ValueError(f"tail_tol must lie in (0, 1), got {tail_tol}")
    backward = side.lower() in ("t", "buyer")
    return _poisson_component_law(tuple(atoms), float(tail_tol), backward)


@functools.lru_cache(maxsize=64)
def _poisson_component_law(atoms: tuple, tail_tol: float, backward: bool) -> CompoundPoissonLaw:
    for a in atoms:
        if a.y <= -1.0:
            raise ValueError(f"atom at y={a.y} implies a zero price ratio (log of zero)")
    shift = _compensator(atoms, backward)
    values = np.array([0.0])
    probs = np.array([1.0])
    dropped = 0.0
    budget = tail_tol / (2 * max(len(atoms), 1))
    for a in atoms:
        rate = a.intensity
        if rate == 0:
            continue
        n_max = int(stats.poisson.isf(budget, rate)) + 1
        counts = np.arange(n_max + 1)
        pmf = stats.poisson.pmf(counts, rate)
        dropped += max(0.0, 1.0 - pmf.sum())
        jump = 2.0 * math.log1p(a.y)
        values = (values[:, None] + counts[None, :] * jump).ravel()
        probs = (probs[:, None] * pmf[None, :]).ravel()
        # merge coincident support points
        key = np.round(values, 12)
        _, inv = np.unique(key, return_inverse=True)
        values = np.bincount(inv, weights=values) / np.bincount(inv)
        probs = np.bincount(inv, weights=probs)
        order = np.argsort(probs)
        cum = np.cumsum(probs[order])
        n_drop = int(np.searchsorted(cum, budget, side="right"))
        if n_drop:
            dropped += float(cum[n_drop - 1])
            keep = np.sort(order[n_drop:])
            values, probs = values[keep], probs[keep]
    order = np.argsort(values)
    values = values[order] + shift
    probs = probs[order]
    values.setflags(write=False)
    probs.setflags(write=False)
    return CompoundPoissonLaw(values, probs, dropped, shift, atoms)


def sample_poisson_component(atoms, n: int, rng: np.random.Generator, side: str = "t0") -> np.ndarray:
    """Direct simulation of the Poisson component (independent of the support construction)."""
    backward = side.lower() in ("t", "buyer")
    out = np.full(n, _compensator(tuple(atoms), backward))
    for a in atoms:
        out += rng.poisson(a.intensity, size=n) * (2.0 * math.log1p(a.y))
    return out


# limit cdfs -----------------------------------------------------------------

def _phi_ratio(num, sigma: float):
    """``Phi(num / sigma)`` with the ``sigma = 0`` step limit."""
    num = np.asarray(num, dtype=float)
    if sigma > 0:
        return special.ndtr(num / sigma)
    return np.where(num > 0, 1.0, np.where(num < 0, 0.0, 0.5))


def limit_cdf(law: LimitLaw, side, x, tail_tol: float = 1e-12):
    """Limit cdf of Λ under the trader (``side=TRADER``) or buyer strategy."""
    side = side.value if hasattr(side, "value") else str(side).lower()
    x = np.asarray(x, dtype=float)
    sig = law.sigma_interval
    if side in ("trader", "t0"):
        cp = poisson_component_law(law.atoms_t0, tail_tol, "t0")
        centre = law.mu_interval
    elif side in ("buyer", "t"):
        cp = poisson_component_law(law.atoms_T, tail_tol, "T")
        centre = -law.mu_interval
    else:
        raise ValueError(f"unknown side {side!r}")
    num = x[..., None] - cp.values - centre
    if sig == 0:
        # step mixture: right-continuous cdf
        return np.sum(cp.probs * (num >= 0), axis=-1)
    return np.sum(cp.probs * _phi_ratio(num, sig), axis=-1)


# translation and tilts --------------------------------------------------------

@dataclass(frozen=True)
class TranslationSpec:
    """Shift turning the fitted law into a risk-neutral one.

    ``amount`` is added to ``log(S_T / S_t0)``; ``replacement`` is the value
    that takes the place of ``log a[t0, T]`` in the price formulas.
    """

    amount: float
    r_dt: float
    log_a: float
    mu_interval: float
    half_sigma2_interval: float
    log_mgf_T1: float

    @property
    def replacement(self) -> float:
        return self.r_dt - self.mu_interval - self.half_sigma2_interval - self.log_mgf_T1


def translation_spec(law: LimitLaw, r: float, delta_t: float, log_a: float,
                     tail_tol: float = 1e-12) -> TranslationSpec:
    if not delta_t > 0:
        raise ValueError(f"delta_t must be > 0, got {delta_t}")
    cp = poisson_component_law(law.atoms_T, tail_tol, "T")
    m1 = cp.mgf(1.0)
    if not np.isfinite(m1) or m1 <= 0:
        raise ArithmeticError(f"Poisson-component mgf at 1 is not finite: {m1}")
    log_m1 = math.log(m1)
    half = 0.5 * law.sigma2_interval
    amount = r * delta_t - log_a - law.mu_interval - half - log_m1
    return TranslationSpec(amount, r * delta_t, log_a, law.mu_interval, half, log_m1)


def risk_neutral_expectation(law: LimitLaw, translation: TranslationSpec,
                             tail_tol: float = 1e-12, epsabs: float = 1e-12) -> float:
    """``E*[S_T / S_t0]`` by quadrature under the translated law.

    The translated log ratio is ``log a + amount + mu_interval + sigma Z + y``
    with ``y`` from the buyer-side Poisson component.
    """
    cp = poisson_component_law(law.atoms_T, tail_tol, "T")
    sig = law.sigma_interval
    base = translation.log_a + translation.amount + law.mu_interval
    if sig == 0:
        return float(np.dot(cp.probs, np.exp(base + cp.values)))
    def integrand(z):
        return math.exp(base + sig * z - 0.5 * z * z) / math.sqrt(2 * math.pi)
    # integrand is a shifted Gaussian bump centred at z = sig
    lo, hi = sig - 40.0, sig + 40.0
    val, err = integrate.quad(integrand, lo, hi, epsabs=epsabs, epsrel=1e-13, limit=200,
                              points=[sig])
    return float(val * np.dot(cp.probs, np.exp(cp.values)))


def normal_tilt(M: float, Sigma2: float, A: float) -> tuple[float, float]:
    """Mean and variance of ``N(M, Sigma2)`` after exponential tilting by ``exp(A w)``."""
    if not Sigma2 >= 0:
        raise ValueError(f"Sigma2 must be >= 0, got {Sigma2}")
    return M + A * Sigma2, Sigma2


def sigma2_geometric(delta: float, c: float, delta_t: float) -> float:
    """Limit variance on a geometric mesh when ``E U_t^2`` scales like ``c / t``."""
    for name, v in (("delta", delta), ("c", c), ("delta_t", delta_t)):
        if not v > 0:
            raise ValueError(f"{name} must be > 0, got {v}")
    return 4.0 * delta * delta_t * c
