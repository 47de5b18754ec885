"""
Leave-one-out subset stability study.

For each simulated dataset a full model is fitted once; then, for each
selected omitted row, the remaining points are fitted twice: from scratch
with the simplex engine (fresh k-means start, no knowledge of the full fit)
and from the full-data estimates with the EM-gradient engine.  The spread
of the subset log-likelihoods measures how reproducible each procedure is.

Reports are plain JSON-ready dictionaries.  Wall times are kept out of the
report itself so that identical configurations give byte-identical report
files; they are returned separately.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .datagen import SimScheme, paper_scheme_model, simulate
from .driver import FitConfig, fit, warm_start_fit
from .exceptions import ManlyError
from .model import MixtureModel, pointwise_log_likelihood

GAP_THRESHOLD = 40.0


def _default_cold() -> FitConfig:
    return FitConfig(algorithm="em_simplex", G=3)


def _default_warm() -> FitConfig:
    return FitConfig(algorithm="em_gradient", G=3)


@dataclass(frozen=True)
class StudyConfig:
    """Settings of a LOO study.

    ``scheme`` supplies the truth model; its ``n`` and ``seed`` are
    replaced by ``n_points`` and per-dataset seeds derived from ``seed``.
    ``full_engine`` selects the algorithm used for the full-data fit that
    seeds the warm starts (always from a k-means start).
    """

    n_datasets: int = 10
    n_points: int = 300
    subset_count: Union[int, str] = 100
    scheme: SimScheme = field(default_factory=lambda: SimScheme(paper_scheme_model(), 300))
    cold_config: FitConfig = field(default_factory=_default_cold)
    warm_config: FitConfig = field(default_factory=_default_warm)
    seed: int = 0
    full_engine: str = "em_simplex"

    def __post_init__(self):
        if self.n_datasets < 0:
            raise ValueError("n_datasets must be non-negative")
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")
        if isinstance(self.subset_count, str):
            if self.subset_count != "all":
                raise ValueError("subset_count must be an integer or 'all'")
        elif not 0 <= self.subset_count <= self.n_points:
            raise ValueError("subset_count must lie in [0, n_points]")
        if self.cold_config.algorithm != "em_simplex":
            raise ValueError("cold_config must use the em_simplex engine")
        if self.warm_config.algorithm != "em_gradient":
            raise ValueError("warm_config must use the em_gradient engine")
        if self.cold_config.G != self.warm_config.G:
            raise ValueError("cold and warm configs must agree on G")
        if self.full_engine not in ("em_simplex", "em_gradient"):
            raise ValueError(f"unknown full_engine {self.full_engine!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def paper_scale(cls, seed: int = 0) -> "StudyConfig":
        """100 datasets of 1000 points, every LOO subset."""
        return cls(
            n_datasets=100,
            n_points=1000,
            subset_count="all",
            scheme=SimScheme(paper_scheme_model(), 1000),
            seed=seed,
        )

    @property
    def n_subsets(self) -> int:
        return self.n_points if self.subset_count == "all" else int(self.subset_count)

    def to_dict(self) -> dict:
        return {
            "n_datasets": self.n_datasets,
            "n_points": self.n_points,
            "subset_count": self.subset_count,
            "scheme": {"model": self.scheme.model.to_dict(), "n": self.scheme.n, "seed": int(self.scheme.seed)},
            "cold_config": self.cold_config.to_dict(),
            "warm_config": self.warm_config.to_dict(),
            "seed": int(self.seed),
            "full_engine": self.full_engine,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        kwargs = {}
        for key in ("n_datasets", "n_points", "seed"):
            if key in d:
                kwargs[key] = int(d.pop(key))
        if "subset_count" in d:
            sc = d.pop("subset_count")
            kwargs["subset_count"] = sc if sc == "all" else int(sc)
        if "full_engine" in d:
            kwargs["full_engine"] = d.pop("full_engine")
        if "scheme" in d:
            s = d.pop("scheme")
            if s == "paper-3.1":
                model = paper_scheme_model()
                s = {}
            else:
                model = MixtureModel.from_dict(s["model"])
            kwargs["scheme"] = SimScheme(model, int(s.get("n", kwargs.get("n_points", 300))), int(s.get("seed", 0)))
        for key in ("cold_config", "warm_config"):
            if key in d:
                kwargs[key] = FitConfig.from_dict(d.pop(key))
        if d:
            raise ValueError(f"unknown study config keys: {sorted(d)}")
        return cls(**kwargs)


def dataset_seed(seed: int, d: int) -> int:
    return int(np.random.SeedSequence([int(seed), d]).generate_state(1, np.uint64)[0])


def selected_rows(config: StudyConfig, d: int) -> np.ndarray:
    """Omitted-row indices for dataset ``d``, in increasing order."""
    n = config.n_points
    if config.subset_count == "all":
        return np.arange(n)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), d, 1]))
    return np.sort(rng.choice(n, size=int(config.subset_count), replace=False))


def _fail_tag(exc: Exception) -> str:
    return type(exc).__name__


def _full_fit(config: StudyConfig, d: int):
    scheme = replace(config.scheme, n=config.n_points, seed=dataset_seed(config.seed, d))
    data = simulate(scheme)
    base = config.cold_config if config.full_engine == "em_simplex" else config.warm_config
    cfg = replace(base, init="kmeans_hard")
    full = fit(data, cfg)
    return data, full


def _subset_job(args):
    data, full, omit, config = args
    n = data.n
    row_map = np.concatenate([np.arange(omit), np.arange(omit + 1, n)])
    sub = data.subset(row_map)
    rec = {"omitted": int(omit)}

    start = time.perf_counter()
    try:
        cold = fit(sub, replace(config.cold_config, init="kmeans_hard"))
        rec["cold"] = (cold.loglik, cold.iterations, cold.converged, None)
    except (ManlyError, ValueError, ArithmeticError) as exc:
        rec["cold"] = (math.nan, 0, False, _fail_tag(exc))
    rec["cold_seconds"] = time.perf_counter() - start

    expected = full.loglik - float(pointwise_log_likelihood(data.x[omit:omit + 1], full.model)[0])
    start = time.perf_counter()
    try:
        warm = warm_start_fit(sub, full, row_map, config.warm_config)
        rec["warm"] = (warm.loglik, warm.iterations, warm.converged, None)
        rec["warm_initial"] = float(warm.loglik_trace[0])
    except (ManlyError, ValueError, ArithmeticError) as exc:
        rec["warm"] = (math.nan, 0, False, _fail_tag(exc))
        rec["warm_initial"] = math.nan
    rec["warm_seconds"] = time.perf_counter() - start
    rec["expected_initial"] = expected
    return rec


def _full_job(args):
    config, d = args
    start = time.perf_counter()
    data, full = _full_fit(config, d)
    return data, full, time.perf_counter() - start


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _engine_block(recs, key):
    return {
        "loglik": [_num(r[key][0]) for r in recs],
        "iterations": [int(r[key][1]) for r in recs],
        "converged": [bool(r[key][2]) for r in recs],
        "failure": [r[key][3] for r in recs],
    }


def run_loo_study(config: StudyConfig, workers: int = 1):
    """Run the study.

    Returns
    -------
    report : dict
        JSON-ready report; byte-identical across reruns and worker counts.
    timings : dict
        Per-dataset wall times of the full fit and every subset fit.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    mapper = pool.map if pool is not None else map
    try:
        fulls = list(mapper(_full_job, [(config, d) for d in range(config.n_datasets)]))
        jobs, owners = [], []
        for d, (data, full, _) in enumerate(fulls):
            for omit in selected_rows(config, d):
                jobs.append((data, full, int(omit), config))
                owners.append(d)
        if pool is not None:
            chunk = max(1, len(jobs) // (4 * workers))
            records = list(pool.map(_subset_job, jobs, chunksize=chunk))
        else:
            records = [_subset_job(j) for j in jobs]
    finally:
        if pool is not None:
            pool.shutdown()

    datasets, timings = [], []
    for d, (data, full, full_seconds) in enumerate(fulls):
        recs = [r for r, o in zip(records, owners) if o == d]
        warm = _engine_block(recs, "warm")
        warm["initial_loglik"] = [_num(r["warm_initial"]) for r in recs]
        warm["expected_initial_loglik"] = [_num(r["expected_initial"]) for r in recs]
        datasets.append({
            "index": d,
            "dataset_seed": dataset_seed(config.seed, d),
            "full_loglik": full.loglik,
            "full_iterations": full.iterations,
            "full_converged": full.converged,
            "omitted": [r["omitted"] for r in recs],
            "cold": _engine_block(recs, "cold"),
            "warm": warm,
        })
        timings.append({
            "index": d,
            "full_seconds": full_seconds,
            "cold_seconds": [r["cold_seconds"] for r in recs],
            "warm_seconds": [r["warm_seconds"] for r in recs],
        })
    report = {"config": config.to_dict(), "datasets": datasets}
    report["summary"] = summarize(report)
    return report, {"datasets": timings}


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def _arr(values):
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _std(v):
    v = v[np.isfinite(v)]
    return float(np.std(v, ddof=1)) if v.size > 1 else None


def _mean(v):
    return float(np.mean(v)) if v.size else None


def summarize(report: dict, timings: Optional[dict] = None) -> dict:
    """Per-dataset and pooled stability statistics.

    Failed fits are dropped per engine for the standard deviations and
    pairwise for the warm-minus-cold differences.
    """
    per_dataset, pooled = [], []
    for ds in report["datasets"]:
        cold = _arr(ds["cold"]["loglik"])
        warm = _arr(ds["warm"]["loglik"])
        ok = np.isfinite(cold) & np.isfinite(warm)
        diff = warm[ok] - cold[ok]
        pooled.append(diff)
        per_dataset.append({
            "index": ds["index"],
            "full_loglik": ds["full_loglik"],
            "n_subsets": int(cold.size),
            "cold_std": _std(cold),
            "warm_std": _std(warm),
            "cold_mean": _mean(cold[np.isfinite(cold)]),
            "warm_mean": _mean(warm[np.isfinite(warm)]),
            "mean_difference": _mean(diff),
            "max_abs_difference": float(np.max(np.abs(diff))) if diff.size else None,
            "cold_failures": int(np.sum(~np.isfinite(cold))),
            "warm_failures": int(np.sum(~np.isfinite(warm))),
        })
    alldiff = np.concatenate(pooled) if pooled else np.empty(0)
    cold_wins = alldiff[alldiff < 0]
    warm_wins = alldiff[alldiff > 0]
    rows = [r for r in per_dataset if r["mean_difference"] is not None]
    stds = [r for r in per_dataset if r["cold_std"] is not None and r["warm_std"] is not None]

    def frac(count, total):
        return count / total if total else None

    agg = {
        "n_datasets": len(per_dataset),
        "n_pairs": int(alldiff.size),
        "mean_cold_std": _mean(np.array([r["cold_std"] for r in stds])),
        "mean_warm_std": _mean(np.array([r["warm_std"] for r in stds])),
        "datasets_warm_std_smaller": sum(r["warm_std"] < r["cold_std"] for r in stds),
        "mean_difference": _mean(alldiff),
        "frac_datasets_positive_mean_difference": frac(sum(r["mean_difference"] > 0 for r in rows), len(rows)),
        "datasets_warm_mean_ge_cold": sum(r["mean_difference"] >= 0 for r in rows),
        "frac_subsets_cold_wins": frac(cold_wins.size, alldiff.size) if alldiff.size else 0.0,
        "frac_subsets_warm_wins": frac(warm_wins.size, alldiff.size) if alldiff.size else 0.0,
        "mean_gap_when_cold_wins": float(-cold_wins.mean()) if cold_wins.size else None,
        "mean_gap_when_warm_wins": float(warm_wins.mean()) if warm_wins.size else None,
        "datasets_with_gap_ge_40": sum(
            r["max_abs_difference"] is not None and r["max_abs_difference"] >= GAP_THRESHOLD
            for r in per_dataset
        ),
        "cold_failures": sum(r["cold_failures"] for r in per_dataset),
        "warm_failures": sum(r["warm_failures"] for r in per_dataset),
    }
    out = {"datasets": per_dataset, "aggregate": agg}
    if timings is not None:
        t = []
        for ds in timings["datasets"]:
            t.append({
                "index": ds["index"],
                "full_seconds": ds["full_seconds"],
                "cold_mean_seconds": _mean(np.asarray(ds["cold_seconds"], dtype=float)),
                "warm_mean_seconds": _mean(np.asarray(ds["warm_seconds"], dtype=float)),
            })
        out["timings"] = t
    return out


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_text(summary: dict) -> str:
    """Aligned-column rendering of a ``summarize`` result."""
    cols = ["index", "n_subsets", "cold_std", "warm_std", "cold_mean", "warm_mean",
            "mean_difference", "max_abs_difference", "cold_failures", "warm_failures"]
    table = [cols] + [[_fmt(r[c]) for c in cols] for r in summary["datasets"]]
    widths = [max(len(row[j]) for row in table) for j in range(len(cols))]
    lines = ["per-dataset statistics (difference = warm - cold)"]
    for row in table:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    if "timings" in summary:
        lines.append("")
        lines.append("mean fit time per dataset (seconds)")
        tcols = ["index", "full_seconds", "cold_mean_seconds", "warm_mean_seconds"]
        ttab = [tcols] + [[_fmt(r[c]) for c in tcols] for r in summary["timings"]]
        tw = [max(len(row[j]) for row in ttab) for j in range(len(tcols))]
        for row in ttab:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, tw)))
    lines.append("")
    lines.append("aggregate")
    agg = summary["aggregate"]
    kw = max(len(k) for k in agg)
    for k, v in agg.items():
        lines.append(f"  {k.ljust(kw)}  {_fmt(v)}")
    return "\n".join(lines) + "\n"


def _write_csv(path, header, rows):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


def write_csv_exports(prefix: str, report: dict, timings: Optional[dict] = None) -> list:
    """Write the four per-panel CSV files and return their paths.

    ``<prefix>_std.csv``, ``<prefix>_times.csv``,
    ``<prefix>_mean_differences.csv`` and ``<prefix>_pooled_differences.csv``.
    """
    summary = summarize(report, timings)
    paths = [f"{prefix}_{name}.csv" for name in ("std", "times", "mean_differences", "pooled_differences")]
    _write_csv(paths[0], ["dataset", "cold_std", "warm_std"],
               [(r["index"], r["cold_std"], r["warm_std"]) for r in summary["datasets"]])
    _write_csv(paths[1], ["dataset", "full_seconds", "cold_mean_seconds", "warm_mean_seconds"],
               [(r["index"], r["full_seconds"], r["cold_mean_seconds"], r["warm_mean_seconds"])
                for r in summary.get("timings", [])])
    _write_csv(paths[2], ["dataset", "mean_difference"],
               [(r["index"], r["mean_difference"]) for r in summary["datasets"]])
    pooled = []
    for ds in report["datasets"]:
        for omit, c, w in zip(ds["omitted"], ds["cold"]["loglik"], ds["warm"]["loglik"]):
            pooled.append((ds["index"], omit, None if c is None or w is None else w - c))
    _write_csv(paths[3], ["dataset", "omitted_row", "difference"], pooled)
    return paths
