"""
Outer EM loops for both M-step engines.

``em_gradient`` takes one safeguarded Newton step on each skew vector and
then refreshes weights, means and covariances in closed form, so every
iteration is a generalized EM step and the observed log-likelihood never
decreases.  ``em_simplex`` solves the profile problem in each skew vector
with Nelder-Mead.

The trace starts with the log-likelihood of the initial parameters, so
``loglik_trace`` has ``iterations + 1`` entries.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .estep import check_responsibilities, e_step
from .exceptions import DivergenceError, EmptyComponentError, InitError
from .model import Dataset, MixtureModel
from .newton import SafeguardOptions, closed_form_updates, newton_lambda_step
from .simplex import SimplexOptions, _profile, nelder_mead_minimize

ALGORITHMS = ("em_gradient", "em_simplex")
INITS = ("kmeans_hard", "given_responsibilities", "given_model")


@dataclass(frozen=True)
class FitConfig:
    algorithm: str = "em_gradient"
    G: int = 1
    max_iter: int = 1000
    rel_tol: float = 1e-8
    init: str = "kmeans_hard"
    seed: int = 0
    simplex_opts: SimplexOptions = field(default_factory=SimplexOptions)
    newton_opts: SafeguardOptions = field(default_factory=SafeguardOptions)
    n_min: Optional[float] = None  # None -> p + 1
    update_lambda: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}; expected one of {INITS}")
        if self.G < 1:
            raise ValueError("G must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        if "simplex_opts" in d:
            d["simplex_opts"] = SimplexOptions(**d["simplex_opts"])
        if "newton_opts" in d:
            d["newton_opts"] = SafeguardOptions(**d["newton_opts"])
        return cls(**d)


@dataclass(frozen=True)
class WarmStart:
    """Starting point for a fit: responsibilities, a model, or both."""

    resp: Optional[np.ndarray] = None
    model: Optional[MixtureModel] = None


@dataclass
class FitResult:
    model: MixtureModel
    resp: np.ndarray
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    hard_labels: np.ndarray
    elapsed_seconds: float

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "elapsed_seconds": float(self.elapsed_seconds),
            "hard_labels": [int(v) for v in self.hard_labels],
        }


def _seed32(seed) -> int:
    return int(np.random.SeedSequence(int(seed)).generate_state(1)[0])


def _kmeans(x, k, seed):
    from sklearn.cluster import KMeans
    from threadpoolctl import threadpool_limits

    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=_seed32(seed))
    # a single thread keeps the centroid reductions in a fixed order
    with warnings.catch_warnings(), threadpool_limits(1):
        warnings.simplefilter("ignore")
        return km.fit_predict(x)


def _repair_small_clusters(x, labels, G, min_size, seed):
    # dissolve undersized clusters into their nearest neighbour, then bisect
    # the widest cluster whose 2-means split leaves both halves large enough
    labels = labels.copy()
    for _ in range(G):
        counts = np.bincount(labels, minlength=G)
        small = np.flatnonzero(counts < min_size)
        if small.size == 0:
            return labels
        g = int(small[0])
        others = [h for h in range(G) if h != g and counts[h] > 0]
        centers = np.array([x[labels == h].mean(axis=0) for h in others])
        members = np.flatnonzero(labels == g)
        d2 = ((x[members, None, :] - centers[None]) ** 2).sum(axis=2)
        labels[members] = np.array(others)[np.argmin(d2, axis=1)]
        sse = {h: ((x[labels == h] - x[labels == h].mean(axis=0)) ** 2).sum() for h in others}
        for h in sorted(others, key=lambda h: -sse[h]):
            rows = np.flatnonzero(labels == h)
            if rows.size < 2 * min_size or np.unique(x[rows], axis=0).shape[0] < 2:
                continue
            halves = _kmeans(x[rows], 2, seed)
            if min(np.bincount(halves, minlength=2)) >= min_size:
                labels[rows[halves == 1]] = g
                break
        else:
            break
    if np.all(np.bincount(labels, minlength=G) >= min_size):
        return labels
    raise InitError(f"could not form {G} clusters of at least {min_size} points")


def init_hard_assign(data: Dataset, G: int, seed=0, min_size: int = 1) -> np.ndarray:
    """One-hot responsibilities from a k-means++ seeded k-means partition.

    Clusters with fewer than ``min_size`` members are dissolved into their
    nearest neighbours and the widest remaining cluster is bisected, so a
    handful of far-out points cannot claim a component of their own.
    """
    if data.n < G:
        raise InitError(f"cannot form {G} clusters from {data.n} observations")
    if G == 1:
        return np.ones((data.n, 1))
    if np.unique(data.x, axis=0).shape[0] < G:
        raise InitError(f"fewer than {G} distinct observations")
    labels = _kmeans(data.x, G, seed)
    if min_size > 1:
        labels = _repair_small_clusters(data.x, labels, G, min_size, seed)
    z = np.zeros((data.n, G))
    z[np.arange(data.n), labels] = 1.0
    return z


def _coerce_warm(warm) -> WarmStart:
    if warm is None or isinstance(warm, WarmStart):
        return warm or WarmStart()
    if isinstance(warm, MixtureModel):
        return WarmStart(model=warm)
    return WarmStart(resp=np.asarray(warm, dtype=float))


def _initial_state(data: Dataset, config: FitConfig, warm: WarmStart, n_min):
    G = config.G
    if config.init == "kmeans_hard":
        z0 = init_hard_assign(data, G, config.seed, min_size=int(np.ceil(n_min)))
        model = closed_form_updates(data, z0, [np.zeros(data.p)] * G, n_min)
        z, ll = e_step(data.x, model)
        return model, z, ll
    if config.init == "given_model":
        if warm.model is None:
            raise ValueError("init='given_model' requires a warm-start model")
        model = warm.model
        if model.G != G or model.p != data.p:
            raise ValueError(f"warm model has G={model.G}, p={model.p}; expected G={G}, p={data.p}")
        z, ll = e_step(data.x, model)
        return model, z, ll
    if warm.resp is None:
        raise ValueError("init='given_responsibilities' requires warm-start responsibilities")
    z0 = check_responsibilities(warm.resp, data.n, G)
    if warm.model is not None:
        # full parameter set supplied: start exactly there with the given memberships
        _, ll = e_step(data.x, warm.model)
        return warm.model, z0, ll
    model = closed_form_updates(data, z0, [np.zeros(data.p)] * G, n_min)
    z, ll = e_step(data.x, model)
    return model, z, ll


def _m_step(data: Dataset, z, model: MixtureModel, config: FitConfig, n_min):
    x = data.x
    lambdas = []
    for g, comp in enumerate(model.components):
        if not config.update_lambda:
            lambdas.append(comp.lam)
            continue
        z_col = z[:, g]
        if config.algorithm == "em_gradient":
            report = newton_lambda_step(data, z_col, comp, config.newton_opts)
            lambdas.append(report.lambda_new)
        else:
            if z_col.sum() < n_min:
                raise EmptyComponentError(
                    f"component {g} has effective size {z_col.sum():.3g} < {n_min}", component=g
                )
            lam, _ = nelder_mead_minimize(
                lambda lam: _profile(x, z_col, lam), comp.lam, config.simplex_opts
            )
            lambdas.append(lam)
    return closed_form_updates(data, z, lambdas, n_min)


def fit(
    data: Dataset,
    config: FitConfig,
    warm: Union[None, np.ndarray, MixtureModel, WarmStart] = None,
) -> FitResult:
    """Fit a Manly mixture by EM with the configured M-step engine.

    Raises
    ------
    EmptyComponentError
        A component's effective size fell below ``n_min``; ``iteration``
        is set on the exception.
    DivergenceError
        The observed log-likelihood became non-finite.
    """
    start = time.perf_counter()
    n_min = data.p + 1 if config.n_min is None else config.n_min
    if data.n <= config.G * n_min:
        raise ValueError(f"need n > G * n_min = {config.G * n_min}, got n = {data.n}")
    warm = _coerce_warm(warm)

    try:
        model, z, ll = _initial_state(data, config, warm, n_min)
    except EmptyComponentError as exc:
        exc.iteration = 0
        raise
    trace = [ll]
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        try:
            model = _m_step(data, z, model, config, n_min)
        except EmptyComponentError as exc:
            exc.iteration = iteration
            raise
        z, ll = e_step(data.x, model)
        if not np.isfinite(ll):
            raise DivergenceError(f"log-likelihood became {ll} at iteration {iteration}")
        trace.append(ll)
        if abs(ll - trace[-2]) / (1.0 + abs(ll)) < config.rel_tol:
            converged = True
            break

    return FitResult(
        model=model,
        resp=z,
        loglik_trace=np.array(trace),
        iterations=iteration,
        converged=converged,
        hard_labels=np.argmax(z, axis=1),
        elapsed_seconds=time.perf_counter() - start,
    )


def warm_start_fit(
    data_subset: Dataset,
    full_fit: FitResult,
    row_map,
    config: FitConfig,
) -> FitResult:
    """EM-gradient fit of a subset started from a full-data fit.

    ``row_map[i]`` is the full-data row of subset row ``i``.  Memberships are
    the full fit's responsibilities restricted to those rows; skew vectors,
    weights, means and covariances all start at the full-data estimates.
    """
    row_map = np.asarray(row_map, dtype=int)
    n_full = full_fit.resp.shape[0]
    if row_map.shape != (data_subset.n,):
        raise IndexError("row_map must have one entry per subset row")
    if np.any(row_map < 0) or np.any(row_map >= n_full):
        raise IndexError(f"row_map entries must lie in [0, {n_full})")
    warm = WarmStart(resp=full_fit.resp[row_map], model=full_fit.model)
    cfg = replace(config, algorithm="em_gradient", init="given_responsibilities", G=full_fit.model.G)
    return fit(data_subset, cfg, warm)
