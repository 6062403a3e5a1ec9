"""Transaction meshes and positive price-path ensembles.

Generators here only manufacture test beds with a known ground truth; the
pricing route itself never looks at the generating model.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Mesh:
    """Ordered transaction times ``t0 = times[0] < ... < times[-1] = T``."""

    t0: float
    T: float
    times: np.ndarray
    kind: str = "uniform"
    delta: float | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("mesh needs at least two transaction times")
        if not np.all(np.diff(times) > 0):
            raise ValueError("mesh times must be strictly increasing")
        if times[0] != self.t0 or times[-1] != self.T:
            raise ValueError("mesh must start at t0 and end exactly at T")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def k(self) -> int:
        """Number of intervals."""
        return self.times.size - 1

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def size(self) -> float:
        """Mesh size, the largest spacing."""
        return float(self.spacings.max())

    def subsample(self, step: int) -> "Mesh":
        """Every ``step``-th time; ``step`` must divide ``k``."""
        if step < 1 or self.k % step:
            raise ValueError(f"step {step} does not divide k={self.k}")
        return Mesh(self.t0, self.T, self.times[::step], kind=self.kind, delta=self.delta)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "T": self.T, "kind": self.kind, "delta": self.delta,
                "times": self.times.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh":
        return cls(d["t0"], d["T"], np.asarray(d["times"], dtype=float),
                   kind=d.get("kind", "uniform"), delta=d.get("delta"))


def make_mesh(kind: str, t0: float, T: float, param: float) -> Mesh:
    """Build a uniform mesh with ``param`` intervals or a geometric one with
    ``t_j - t_{j-1} = param * t_{j-1}``.

    The geometric recurrence is cut at ``T``; the last interval is whatever
    remains and may be shorter than the recurrence value.
    """
    if not T > t0:
        raise ValueError(f"need T > t0, got t0={t0}, T={T}")
    if kind == "uniform":
        k = int(param)
        if k != param or k < 1:
            raise ValueError(f"uniform mesh needs an integer count k >= 1, got {param}")
        times = t0 + (T - t0) * np.arange(k + 1) / k
        times[-1] = T
        return Mesh(t0, T, times, kind="uniform")
    if kind == "geometric":
        delta = float(param)
        if not delta > 0:
            raise ValueError(f"geometric mesh needs delta > 0, got {delta}")
        if t0 <= 0:
            raise ValueError("geometric mesh needs t0 > 0 (spacing is proportional to t)")
        times = [t0]
        while True:
            nxt = times[-1] * (1.0 + delta)
            # keep a guard so the final short interval is not a rounding sliver
            if nxt >= T * (1.0 - 1e-12):
                break
            times.append(nxt)
        if len(times) < 2:
            raise ValueError(
                f"delta={delta} too large: no interior transaction time fits in [{t0}, {T}]")
        times.append(T)
        return Mesh(t0, T, np.asarray(times), kind="geometric", delta=delta)
    raise ValueError(f"unknown mesh kind {kind!r} (expected 'uniform' or 'geometric')")


@dataclass(frozen=True)
class PathEnsemble:
    """``prices[i, j]`` is path ``i`` at ``mesh.times[j]``."""

    mesh: Mesh
    prices: np.ndarray
    seed: int
    model_tag: dict = field(default_factory=dict)

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2 or prices.shape[1] != self.mesh.k + 1:
            raise ValueError(
                f"prices must be n_paths x {self.mesh.k + 1}, got shape {prices.shape}")
        if np.isnan(prices).any():
            raise ValueError("prices contain NaN")
        if not np.all(prices > 0):
            raise ValueError("prices must be strictly positive")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    def subsample(self, step: int) -> "PathEnsemble":
        """Same paths observed on every ``step``-th transaction time."""
        tag = dict(self.model_tag, subsample=step * self.model_tag.get("subsample", 1))
        return PathEnsemble(self.mesh.subsample(step), self.prices[:, ::step].copy(),
                            self.seed, tag)

    def split(self) -> tuple["PathEnsemble", "PathEnsemble"]:
        """First and second half of the paths."""
        h = self.n_paths // 2
        return (PathEnsemble(self.mesh, self.prices[:h], self.seed, self.model_tag),
                PathEnsemble(self.mesh, self.prices[h:], self.seed, self.model_tag))

    # serialization -------------------------------------------------------

    def _meta(self) -> dict:
        return {"seed": self.seed, "model_tag": self.model_tag, "mesh": self.mesh.to_dict()}

    def to_csv(self, path) -> None:
        """One metadata comment line, a header row holding the times, one path per row."""
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(self._meta()) + "\n")
            fh.write(",".join(repr(float(t)) for t in self.mesh.times) + "\n")
            for row in self.prices:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "PathEnsemble":
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty ensemble file")
        meta = {}
        if lines[0].startswith("#"):
            meta = json.loads(lines[0][1:])
            lines = lines[1:]
        if len(lines) < 2:
            raise ValueError(f"{path}: need a time header row and at least one path")
        times = np.array([float(x) for x in lines[0].split(",")])
        prices = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
        if "mesh" in meta:
            mesh = Mesh.from_dict(meta["mesh"])
            if not np.array_equal(mesh.times, times):
                raise ValueError(f"{path}: header times disagree with metadata mesh")
        else:
            mesh = Mesh(float(times[0]), float(times[-1]), times, kind="ingested")
        return cls(mesh, prices, int(meta.get("seed", 0)), meta.get("model_tag", {}))

    def to_npz(self, path) -> None:
        """Binary cache with the parameter block embedded as JSON."""
        np.savez(path, prices=self.prices, times=self.mesh.times,
                 meta=np.array(json.dumps(self._meta())))

    @classmethod
    def from_npz(cls, path) -> "PathEnsemble":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            mesh = Mesh.from_dict(meta["mesh"])
            return cls(mesh, z["prices"], int(meta["seed"]), meta["model_tag"])


def load_ensemble(path) -> PathEnsemble:
    path = str(path)
    if path.endswith(".npz"):
        return PathEnsemble.from_npz(path)
    return PathEnsemble.from_csv(path)


# generators ---------------------------------------------------------------

def _path_rng(seed: int, path_id: int) -> np.random.Generator:
    # counter-based stream keyed by (seed, path) so any subset of paths can be
    # produced in any order, by any worker, with identical results
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(path_id)]))


def _fill(n_paths: int, threads: int | None, work) -> None:
    blocks = [(a, min(a + 4096, n_paths)) for a in range(0, n_paths, 4096)]
    if threads is None or threads <= 1 or len(blocks) == 1:
        for a, b in blocks:
            work(a, b)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda ab: work(*ab), blocks))


def _check_common(s0, sigma, n_paths):
    if not s0 > 0:
        raise ValueError(f"s0 must be > 0, got {s0}")
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if int(n_paths) != n_paths or n_paths < 1:
        raise ValueError(f"n_paths must be a positive integer, got {n_paths}")


def gen_gbm(s0: float, mu: float, sigma: float, mesh: Mesh, n_paths: int, seed: int,
            threads: int | None = None) -> PathEnsemble:
    """Geometric Brownian motion sampled exactly on the mesh."""
    _check_common(s0, sigma, n_paths)
    return _simulate(s0, mu, sigma, 0.0, [], mesh, int(n_paths), seed, threads,
                     {"model": "gbm", "s0": s0, "mu": mu, "sigma": sigma})


def gen_jump_diffusion(s0: float, mu: float, sigma: float, jump_intensity: float,
                       jump_sizes: Sequence[tuple[float, float]], mesh: Mesh, n_paths: int,
                       seed: int, threads: int | None = None) -> PathEnsemble:
    """GBM skeleton times ``exp(sum of log-jumps)`` with Poisson jump counts.

    ``jump_sizes`` is a list of ``(log_jump, probability)`` pairs. The drift
    ``mu`` is that of the diffusive skeleton; jumps are not compensated.
    """
    _check_common(s0, sigma, n_paths)
    if not jump_intensity >= 0:
        raise ValueError(f"jump_intensity must be >= 0, got {jump_intensity}")
    jumps = [(float(y), float(p)) for y, p in jump_sizes]
    if not jumps:
        raise ValueError("jump_sizes must not be empty")
    probs = np.array([p for _, p in jumps])
    if np.any(probs < 0):
        raise ValueError("jump probabilities must be nonnegative")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError(f"jump probabilities must sum to 1, got {probs.sum()}")
    tag = {"model": "jump_diffusion", "s0": s0, "mu": mu, "sigma": sigma,
           "jump_intensity": jump_intensity, "jump_sizes": [list(j) for j in jumps]}
    return _simulate(s0, mu, sigma, jump_intensity, jumps, mesh, int(n_paths), seed, threads, tag)


def _simulate(s0, mu, sigma, intensity, jumps, mesh, n_paths, seed, threads, tag):
    dt = mesh.spacings
    # drift enters through elapsed time directly so sigma=0 paths are exact
    drift = (mu - 0.5 * sigma**2) * (mesh.times[1:] - mesh.t0)
    vol = sigma * np.sqrt(dt)
    k = mesh.k
    log_sizes = np.array([y for y, _ in jumps])
    probs = np.array([p for _, p in jumps])
    logs = np.zeros((n_paths, k + 1))

    def work(a, b):
        for i in range(a, b):
            rng = _path_rng(seed, i)
            incr = vol * rng.standard_normal(k)
            if intensity > 0:
                counts = rng.poisson(intensity * dt)
                total = counts.sum()
                if total:
                    sizes = log_sizes[rng.choice(len(probs), size=total, p=probs)]
                    incr += np.bincount(np.repeat(np.arange(k), counts), weights=sizes,
                                        minlength=k)
            row = logs[i, 1:]
            np.cumsum(incr, out=row)
            row += drift

    _fill(n_paths, threads, work)
    prices = np.exp(logs, out=logs)
    prices *= s0
    return PathEnsemble(mesh, prices, int(seed), tag)
