"""
Synthetic Manly-mixture data by rejection sampling.

A draw ``y ~ N(mu_g, Sigma_g)`` maps back to the data scale only when
``y_k lam_k + 1 > 0`` for every transformed coordinate; other draws are
discarded and sampling continues until exactly ``n`` points are accepted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import InfeasibleSchemeError, ManlyError
from .model import ComponentParams, Dataset, MixtureModel
from .transform import SMALL_LAMBDA, manly_inverse

BATCH = 4096
WINDOW = 1_000_000
MIN_ACCEPTANCE = 1e-3


class DataFormatError(ManlyError, ValueError):
    """Malformed dataset CSV."""


def paper_scheme_model() -> MixtureModel:
    """Three bivariate skewed components with well-separated means."""
    return MixtureModel((
        ComponentParams(0.25, [12.0, 12.0], [[4.0, 0.0], [0.0, 4.0]], [1.2, 0.5]),
        ComponentParams(0.30, [4.0, 4.0], [[5.0, -1.0], [-1.0, 3.0]], [0.5, 0.5]),
        ComponentParams(0.45, [4.0, 10.0], [[2.0, -1.0], [-1.0, 2.0]], [1.0, 0.7]),
    ))


@dataclass(frozen=True)
class SimScheme:
    model: MixtureModel
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def simulate(scheme: SimScheme, return_latent: bool = False):
    """Draw ``scheme.n`` labelled observations.

    With ``return_latent=True`` also returns the accepted transformed-scale
    draws ``y`` (one row per observation).

    Raises
    ------
    InfeasibleSchemeError
        If fewer than one draw in a thousand is accepted over a window of
        one million draws.
    """
    data, y, _ = simulate_with_diagnostics(scheme)
    return (data, y) if return_latent else data


def simulate_with_diagnostics(scheme: SimScheme):
    """Like ``simulate`` but returns ``(data, y, proposals)``.

    ``proposals`` counts the draws examined up to and including the last
    accepted one, so ``scheme.n / proposals`` is the acceptance rate.
    """
    model = scheme.model
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(scheme.seed))))
    mus = np.array([c.mu for c in model.components])
    chols = np.array([c.chol for c in model.components])
    lams = np.array([c.lam for c in model.components])
    active = np.abs(lams) > SMALL_LAMBDA
    pis = model.pis

    xs, ys, labels = [], [], []
    accepted = proposals = 0
    window_draws = window_acc = 0
    while accepted < scheme.n:
        g = rng.choice(model.G, size=BATCH, p=pis)
        eps = rng.standard_normal((BATCH, model.p))
        y = mus[g] + np.einsum("bij,bj->bi", chols[g], eps)
        ok = np.all(~active[g] | (y * lams[g] + 1.0 > 0.0), axis=1)
        window_draws += BATCH
        window_acc += int(ok.sum())
        if window_draws >= WINDOW:
            if window_acc / window_draws < MIN_ACCEPTANCE:
                raise InfeasibleSchemeError(
                    f"acceptance rate {window_acc / window_draws:.2e} below {MIN_ACCEPTANCE}"
                )
            window_draws = window_acc = 0
        idx = np.flatnonzero(ok)[: scheme.n - accepted]
        proposals += BATCH if accepted + idx.size < scheme.n else int(idx[-1]) + 1
        xs.append(manly_inverse(y[idx], lams[g[idx]]))
        ys.append(y[idx])
        labels.append(g[idx])
        accepted += idx.size

    data = Dataset(np.concatenate(xs), np.concatenate(labels))
    return data, np.concatenate(ys), proposals


def write_dataset_csv(path, data: Dataset) -> None:
    """Write ``x1..xp`` (and ``label`` when present) with a header row."""
    header = [f"x{k + 1}" for k in range(data.p)]
    if data.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x[i]]
            if data.labels is not None:
                row.append(str(int(data.labels[i])))
            writer.writerow(row)


def read_dataset_csv(path) -> Dataset:
    """Read a dataset CSV; a column named ``label`` is taken as truth labels."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    label_col = header.index("label") if "label" in header else None
    feature_cols = [j for j in range(len(header)) if j != label_col]
    if not feature_cols:
        raise DataFormatError(f"{path}: no feature columns")
    x, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        vals = []
        for j in feature_cols:
            try:
                v = float(row[j])
            except ValueError:
                raise DataFormatError(f"{path}: row {r}, column {header[j]!r}: not a number: {row[j]!r}")
            if not np.isfinite(v):
                raise DataFormatError(f"{path}: row {r}, column {header[j]!r}: non-finite value")
            vals.append(v)
        x.append(vals)
        if label_col is not None:
            try:
                labels.append(int(row[label_col]))
            except ValueError:
                raise DataFormatError(f"{path}: row {r}, column 'label': not an integer: {row[label_col]!r}")
    if not x:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.array(x), np.array(labels) if label_col is not None else None)
