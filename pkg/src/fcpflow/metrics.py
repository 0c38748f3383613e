"""Evaluation metrics for generated and forecast load profiles.

Generation metrics compare a real sample set ``X`` (n x T) with a generated
set ``Y`` (m x T). ED and MMD work on whole profiles; KS and WD on the
pooled, flattened consumption values. All estimators are V-statistics and
deterministic.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import BandwidthError, ContractError, DimensionError, UndefinedMetricError


def _profiles(a, name="X", min_rows=1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D (profiles x steps)")
    if a.shape[0] < min_rows:
        raise ContractError(f"{name} needs at least {min_rows} rows, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} contains non-finite values")
    return a


def _pair(X, Y, min_rows) -> tuple[np.ndarray, np.ndarray]:
    X, Y = _profiles(X, "X", min_rows), _profiles(Y, "Y", min_rows)
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"profile lengths differ: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def _pairwise_sq(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return cdist(A, B, "sqeuclidean")


def _pairwise(A, B) -> np.ndarray:
    return cdist(A, B, "euclidean")


def energy_distance(X, Y) -> float:
    X, Y = _pair(X, Y, 2)
    ed = 2.0 * _pairwise(X, Y).mean() - _pairwise(X, X).mean() - _pairwise(Y, Y).mean()
    return max(float(ed), 0.0)


def ks_distance(X, Y) -> float:
    x = np.sort(_profiles(X, "X").ravel())
    y = np.sort(_profiles(Y, "Y").ravel())
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def wasserstein_1d(X, Y) -> float:
    """Exact 1-Wasserstein distance between pooled empirical distributions."""
    x = np.sort(_profiles(X, "X").ravel())
    y = np.sort(_profiles(Y, "Y").ravel())
    grid = np.sort(np.concatenate([x, y]))
    widths = np.diff(grid)
    fx = np.searchsorted(x, grid[:-1], side="right") / x.size
    fy = np.searchsorted(y, grid[:-1], side="right") / y.size
    return float(np.sum(np.abs(fx - fy) * widths))


def autocorrelation(X) -> tuple[np.ndarray, int]:
    """Mean per-profile sample autocorrelation at lags 1..T-1.

    Returns ``(acf, n_skipped)``; constant profiles are skipped.
    """
    X = _profiles(X)
    T = X.shape[1]
    if T < 3:
        raise DimensionError("autocorrelation needs at least 3 time steps")
    centred = X - X.mean(axis=1, keepdims=True)
    denom = (centred**2).sum(axis=1)
    keep = denom > 0
    if not np.any(keep):
        raise UndefinedMetricError("every profile is constant; autocorrelation is undefined")
    c, d = centred[keep], denom[keep]
    acf = np.array([(c[:, :-lag] * c[:, lag:]).sum(axis=1) / d for lag in range(1, T)])
    return acf.mean(axis=1), int(np.count_nonzero(~keep))


def mse_autocorrelation(X, Y) -> float:
    X, Y = _pair(X, Y, 1)
    rx, _ = autocorrelation(X)
    ry, _ = autocorrelation(Y)
    return float(np.sum((rx - ry) ** 2))


def median_bandwidth(X, Y) -> float:
    Z = np.vstack([X, Y])
    iu = np.triu_indices(Z.shape[0], k=1)
    d = _pairwise(Z, Z)[iu]
    sigma = float(np.median(d)) if d.size else 0.0
    if sigma <= 0:
        raise BandwidthError("median pairwise distance is zero; give an explicit bandwidth")
    return sigma


def mmd_gaussian(X, Y, bandwidth: float | None = None, return_bandwidth: bool = False):
    """Biased MMD with kernel ``exp(-|x-y|^2 / (2 sigma^2))``."""
    X, Y = _pair(X, Y, 2)
    sigma = median_bandwidth(X, Y) if bandwidth is None else float(bandwidth)
    if sigma <= 0:
        raise BandwidthError("bandwidth must be positive")
    g = -0.5 / sigma**2
    kxx = np.exp(g * _pairwise_sq(X, X)).mean()
    kyy = np.exp(g * _pairwise_sq(Y, Y)).mean()
    kxy = np.exp(g * _pairwise_sq(X, Y)).mean()
    value = float(np.sqrt(max(kxx + kyy - 2.0 * kxy, 0.0)))
    return (value, sigma) if return_bandwidth else value


# --- forecast metrics ----------------------------------------------------


def pinball(y_true, quantile_forecasts: dict, taus) -> float:
    """Pinball loss averaged over time steps and quantile levels."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    losses = []
    for tau in taus:
        if not 0 < tau < 1:
            raise ContractError(f"quantile level {tau} outside (0, 1)")
        if tau not in quantile_forecasts:
            raise ContractError(f"no forecast supplied for quantile {tau}")
        q = np.asarray(quantile_forecasts[tau], dtype=np.float64).ravel()
        if q.shape != y.shape:
            raise DimensionError(f"quantile {tau} forecast has {q.size} steps, truth has {y.size}")
        diff = y - q
        losses.append(np.where(diff > 0, tau * diff, (tau - 1.0) * diff).mean())
    return float(np.mean(losses))


def empirical_quantiles(ensemble, taus) -> dict:
    ens = _profiles(ensemble, "ensemble")
    return {tau: np.quantile(ens, tau, axis=0) for tau in taus}


def crps_ensemble(y_true, ensemble) -> float:
    """Empirical-CDF CRPS per step, ``E|X-y| - E|X-X'|/2``, averaged over steps."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    ens = _profiles(ensemble, "ensemble")
    if ens.shape[1] != y.size:
        raise DimensionError(f"ensemble has {ens.shape[1]} steps, truth has {y.size}")
    term1 = np.abs(ens - y).mean(axis=0)
    # sum_ij |x_i - x_j| from sorted members: sum_i (2i - S + 1) x_(i)
    s = ens.shape[0]
    srt = np.sort(ens, axis=0)
    weights = 2.0 * np.arange(s) - s + 1.0
    term2 = 2.0 * (weights[:, None] * srt).sum(axis=0) / (2.0 * s * s)
    return float(np.mean(term1 - term2))


def mse_mean_prediction(y_true, ensemble) -> float:
    y = np.asarray(y_true, dtype=np.float64).ravel()
    ens = _profiles(ensemble, "ensemble")
    if ens.shape[1] != y.size:
        raise DimensionError(f"ensemble has {ens.shape[1]} steps, truth has {y.size}")
    return float(np.mean((ens.mean(axis=0) - y) ** 2))


# --- reports -------------------------------------------------------------


@dataclass
class MetricReport:
    ed: float | None = None
    ks: float | None = None
    wd: float | None = None
    mmd: float | None = None
    mse_a: float | None = None
    pl: float | None = None
    crps: float | None = None
    mse: float | None = None
    meta: dict = field(default_factory=dict)

    def values(self) -> dict:
        d = asdict(self)
        d.pop("meta")
        return {k: v for k, v in d.items() if v is not None}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"metrics": self.values(), "meta": self.meta}, fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        row = {**self.values(), **self.meta}
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            w.writeheader()
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def generation_report(real, generated, bandwidth: float | None = None) -> MetricReport:
    real, generated = _pair(real, generated, 2)
    mmd, sigma = mmd_gaussian(real, generated, bandwidth, return_bandwidth=True)
    _, skip_r = autocorrelation(real)
    _, skip_g = autocorrelation(generated)
    return MetricReport(
        ed=energy_distance(real, generated),
        ks=ks_distance(real, generated),
        wd=wasserstein_1d(real, generated),
        mmd=mmd,
        mse_a=mse_autocorrelation(real, generated),
        meta={
            "n_real": real.shape[0],
            "n_gen": generated.shape[0],
            "bandwidth": sigma,
            "acf_skipped": skip_r + skip_g,
        },
    )


def forecast_report(truths, ensembles, taus=(0.05, 0.5, 0.95)) -> MetricReport:
    """Average PL, CRPS and mean-prediction MSE over forecast cases.

    ``truths`` is (P x T); ``ensembles`` is a sequence of P arrays (S x T).
    """
    truths = _profiles(truths, "truths")
    if len(ensembles) != truths.shape[0]:
        raise DimensionError(f"{len(ensembles)} ensembles for {truths.shape[0]} truths")
    pl, crps, mse = [], [], []
    for y, ens in zip(truths, ensembles):
        pl.append(pinball(y, empirical_quantiles(ens, taus), taus))
        crps.append(crps_ensemble(y, ens))
        mse.append(mse_mean_prediction(y, ens))
    return MetricReport(
        pl=float(np.mean(pl)),
        crps=float(np.mean(crps)),
        mse=float(np.mean(mse)),
        meta={"n_pairs": truths.shape[0], "n_samples": int(np.asarray(ensembles[0]).shape[0]),
              "taus": list(taus)},
    )
