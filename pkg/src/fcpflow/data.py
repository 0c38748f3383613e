"""Load-profile datasets: CSV ingestion, condition construction, scaling,
splitting, day-pair windowing and synthetic generators.

CSV layout (one row per household-day)::

    household,date,x_0,...,x_{T-1},c_<name>,...

``household`` and ``date`` (ISO ``YYYY-MM-DD``) are optional and only needed
for annual totals and day-pair windowing.
"""

from __future__ import annotations

import csv
import json
import math
import re
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, ParseError, ScaleError, SpecError

RESOLUTION_BY_T = {24: 60, 48: 30, 96: 15}
_X_COL = re.compile(r"^x_(\d+)$")


@dataclass
class ProfileDataset:
    profiles: np.ndarray
    conditions: np.ndarray = None
    condition_labels: list = field(default_factory=list)
    resolution: float | None = None
    household: np.ndarray | None = None
    date: np.ndarray | None = None
    scaler: "Scaler | None" = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.profiles = np.atleast_2d(np.asarray(self.profiles, dtype=np.float64))
        n, T = self.profiles.shape
        if n < 1:
            raise ContractError("dataset must contain at least one profile")
        if self.conditions is None:
            self.conditions = np.zeros((n, 0))
        self.conditions = np.asarray(self.conditions, dtype=np.float64).reshape(n, -1)
        if not self.condition_labels:
            self.condition_labels = [f"c_{i}" for i in range(self.conditions.shape[1])]
        if len(self.condition_labels) != self.conditions.shape[1]:
            raise ContractError("condition labels do not match condition columns")
        if self.resolution is None:
            self.resolution = RESOLUTION_BY_T.get(T, 24 * 60 / T)
        for name in ("household", "date"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ContractError(f"{name} column has {len(arr)} entries for {n} profiles")

    @property
    def N(self) -> int:
        return self.profiles.shape[0]

    @property
    def T(self) -> int:
        return self.profiles.shape[1]

    @property
    def B(self) -> int:
        return self.conditions.shape[1]

    @property
    def profile_labels(self) -> list[str]:
        return [f"x_{t}" for t in range(self.T)]

    def subset(self, idx) -> "ProfileDataset":
        idx = np.asarray(idx)
        return replace(
            self,
            profiles=self.profiles[idx],
            conditions=self.conditions[idx],
            condition_labels=list(self.condition_labels),
            household=None if self.household is None else self.household[idx],
            date=None if self.date is None else self.date[idx],
            meta=dict(self.meta),
        )

    def without_conditions(self) -> "ProfileDataset":
        return replace(self, conditions=np.zeros((self.N, 0)), condition_labels=[], meta=dict(self.meta))


# --- CSV -----------------------------------------------------------------


def load_csv(path, allow_negative: bool = False, resolution: float | None = None) -> ProfileDataset:
    """Parse a wide profile CSV. Errors cite 1-based data row numbers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    x_cols = sorted(
        ((int(m.group(1)), i) for i, h in enumerate(header) if (m := _X_COL.match(h))),
    )
    if not x_cols:
        raise ParseError(f"{path}: header has no x_<t> columns")
    if [t for t, _ in x_cols] != list(range(len(x_cols))):
        raise ParseError(f"{path}: profile columns must be x_0..x_{len(x_cols) - 1} without gaps")
    c_cols = [(h, i) for i, h in enumerate(header) if h.startswith("c_")]
    hh_col = header.index("household") if "household" in header else None
    date_col = header.index("date") if "date" in header else None
    if not rows:
        raise ParseError(f"{path}: no data rows")

    profiles = np.empty((len(rows), len(x_cols)))
    conditions = np.empty((len(rows), len(c_cols)))
    households, dates = [], []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        try:
            for j, (_, i) in enumerate(x_cols):
                profiles[r - 1, j] = _number(row[i])
            for j, (_, i) in enumerate(c_cols):
                conditions[r - 1, j] = _number(row[i])
        except ValueError as exc:
            raise ParseError(f"{path}: row {r}: {exc}") from None
        if not allow_negative and np.any(profiles[r - 1] < 0):
            raise ParseError(f"{path}: row {r}: negative power value")
        if hh_col is not None:
            households.append(row[hh_col].strip())
        if date_col is not None:
            try:
                dates.append(np.datetime64(row[date_col].strip(), "D"))
            except ValueError:
                raise ParseError(f"{path}: row {r}: bad date {row[date_col]!r}") from None
    T = profiles.shape[1]
    if T not in RESOLUTION_BY_T and resolution is None:
        warnings.warn(f"profile length {T} is not a standard 15/30/60-minute day", stacklevel=2)
    return ProfileDataset(
        profiles,
        conditions,
        [h for h, _ in c_cols],
        resolution=resolution,
        household=np.array(households) if hh_col is not None else None,
        date=np.array(dates, dtype="datetime64[D]") if date_col is not None else None,
    )


def _number(text: str) -> float:
    text = text.strip()
    if not text:
        raise ValueError("missing value")
    try:
        val = float(text)
    except ValueError:
        raise ValueError(f"non-numeric value {text!r}") from None
    if not math.isfinite(val):
        raise ValueError(f"non-finite value {text!r}")
    return val


def save_csv(dataset: ProfileDataset, path, extra: dict | None = None) -> None:
    """Write ``dataset`` in the ingestion schema; ``extra`` maps leading column names to arrays."""
    extra = extra or {}
    header = list(extra)
    if dataset.household is not None:
        header.append("household")
    if dataset.date is not None:
        header.append("date")
    header += dataset.profile_labels + list(dataset.condition_labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.N):
            row = [str(v[i]) for v in extra.values()]
            if dataset.household is not None:
                row.append(str(dataset.household[i]))
            if dataset.date is not None:
                row.append(str(dataset.date[i]))
            row += [repr(float(v)) for v in dataset.profiles[i]]
            row += [repr(float(v)) for v in dataset.conditions[i]]
            w.writerow(row)


# --- conditions ----------------------------------------------------------


def daily_totals(profiles: np.ndarray, resolution: float) -> np.ndarray:
    """kWh per day from average-kW readings at ``resolution`` minutes."""
    return profiles.sum(axis=1) * (resolution / 60.0)


def derive_conditions(dataset: ProfileDataset, spec) -> ProfileDataset:
    """Build the condition matrix from a list of items, in order.

    Items are ``"daily-total"``, ``"annual-total"`` or names of existing
    condition columns (weather variables and the like pass through).
    """
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    cols, labels = [], []
    for item in spec:
        if item == "daily-total":
            cols.append(daily_totals(dataset.profiles, dataset.resolution))
            labels.append("c_daily")
        elif item == "annual-total":
            if dataset.household is None or dataset.date is None:
                raise SpecError("annual-total needs household and date columns")
            daily = daily_totals(dataset.profiles, dataset.resolution)
            years = dataset.date.astype("datetime64[Y]")
            keys = list(zip(dataset.household.tolist(), years.tolist()))
            totals: dict = {}
            for k, v in zip(keys, daily):
                totals[k] = totals.get(k, 0.0) + v
            cols.append(np.array([totals[k] for k in keys]))
            labels.append("c_annual")
        else:
            name = item if item.startswith("c_") else f"c_{item}"
            if name not in dataset.condition_labels:
                raise SpecError(f"unknown condition {item!r}; available: {dataset.condition_labels}")
            cols.append(dataset.conditions[:, dataset.condition_labels.index(name)])
            labels.append(name)
    conditions = np.column_stack(cols) if cols else np.zeros((dataset.N, 0))
    return replace(dataset, conditions=conditions, condition_labels=labels, meta=dict(dataset.meta))


# --- scaling -------------------------------------------------------------


@dataclass
class Scaler:
    """Per-step standardization of profiles, min-max mapping of conditions."""

    profile_mean: np.ndarray
    profile_std: np.ndarray
    cond_min: np.ndarray
    cond_max: np.ndarray
    condition_labels: list = field(default_factory=list)
    method: str = "standard/minmax"
    clip: tuple = (-0.5, 1.5)

    @property
    def cond_scale(self) -> np.ndarray:
        return self.cond_max - self.cond_min

    def transform_profiles(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.profile_mean) / self.profile_std

    def inverse_profiles(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.profile_std + self.profile_mean

    def transform_conditions(self, c) -> tuple[np.ndarray, int]:
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        if c.shape[1] != len(self.cond_min):
            raise ContractError(f"expected {len(self.cond_min)} condition columns, got {c.shape[1]}")
        scaled = (c - self.cond_min) / self.cond_scale
        clipped = np.clip(scaled, *self.clip)
        return clipped, int(np.count_nonzero(clipped != scaled))

    def inverse_conditions(self, c) -> np.ndarray:
        return np.asarray(c, dtype=np.float64) * self.cond_scale + self.cond_min

    def log_abs_det(self) -> float:
        """log|det| of the profile transform, for converting densities."""
        return -float(np.sum(np.log(self.profile_std)))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "profile_mean": self.profile_mean.tolist(),
            "profile_std": self.profile_std.tolist(),
            "cond_min": self.cond_min.tolist(),
            "cond_max": self.cond_max.tolist(),
            "condition_labels": list(self.condition_labels),
            "clip": list(self.clip),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(
            np.asarray(d["profile_mean"], dtype=np.float64),
            np.asarray(d["profile_std"], dtype=np.float64),
            np.asarray(d["cond_min"], dtype=np.float64),
            np.asarray(d["cond_max"], dtype=np.float64),
            list(d.get("condition_labels", [])),
            d.get("method", "standard/minmax"),
            tuple(d.get("clip", (-0.5, 1.5))),
        )


def fit_scaler(train: ProfileDataset, std_floor: float = 1e-8) -> Scaler:
    mean = train.profiles.mean(axis=0)
    std = np.maximum(train.profiles.std(axis=0), std_floor)
    cmin = train.conditions.min(axis=0) if train.B else np.zeros(0)
    cmax = train.conditions.max(axis=0) if train.B else np.zeros(0)
    for j, label in enumerate(train.condition_labels):
        if not cmax[j] > cmin[j]:
            raise ScaleError(f"condition column {label} is constant in the training split")
    return Scaler(mean, std, cmin, cmax, list(train.condition_labels))


def apply_scaler(dataset: ProfileDataset, scaler: Scaler) -> ProfileDataset:
    if dataset.B != len(scaler.cond_min):
        raise ContractError(f"scaler expects {len(scaler.cond_min)} conditions, dataset has {dataset.B}")
    conditions, n_clipped = scaler.transform_conditions(dataset.conditions)
    if n_clipped:
        warnings.warn(f"{n_clipped} condition values clipped to {scaler.clip}", stacklevel=2)
    meta = dict(dataset.meta, n_clipped=n_clipped)
    return replace(
        dataset,
        profiles=scaler.transform_profiles(dataset.profiles),
        conditions=conditions,
        scaler=scaler,
        meta=meta,
    )


def invert_scaler(dataset: ProfileDataset, scaler: Scaler | None = None) -> ProfileDataset:
    scaler = scaler or dataset.scaler
    if scaler is None:
        raise ContractError("dataset carries no scaler to invert")
    return replace(
        dataset,
        profiles=scaler.inverse_profiles(dataset.profiles),
        conditions=scaler.inverse_conditions(dataset.conditions) if dataset.B else dataset.conditions,
        scaler=None,
        meta=dict(dataset.meta),
    )


def write_manifest(path, dataset: ProfileDataset, scaler: Scaler | None) -> None:
    doc = {
        "resolution": dataset.resolution,
        "N": dataset.N,
        "T": dataset.T,
        "B": dataset.B,
        "condition_labels": list(dataset.condition_labels),
        "scaler": None if scaler is None else scaler.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


# --- splitting and windowing ---------------------------------------------


def split(dataset: ProfileDataset, fraction: float = 0.8, seed=0) -> tuple[ProfileDataset, ProfileDataset]:
    """Seeded random split; the first part holds ``round(N * fraction)`` rows."""
    if not 0 < fraction < 1:
        raise ContractError("fraction must lie strictly between 0 and 1")
    if dataset.N < 2:
        raise ContractError("need at least 2 profiles to split")
    perm = np.random.default_rng(seed).permutation(dataset.N)
    n_train = min(max(int(round(dataset.N * fraction)), 1), dataset.N - 1)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def window_day_pairs(dataset: ProfileDataset) -> ProfileDataset:
    """Pair each day with the household's previous calendar day.

    Output rows hold day ``d+1`` as the profile and the whole day-``d``
    profile as the condition (B = T). Pairs across gaps are skipped and
    counted in ``meta["skipped_gaps"]``.
    """
    if dataset.household is None or dataset.date is None:
        raise SpecError("day-pair windowing needs household and date columns")
    order = np.lexsort((dataset.date, dataset.household))
    hh, dates, prof = dataset.household[order], dataset.date[order], dataset.profiles[order]
    same_hh = hh[1:] == hh[:-1]
    consecutive = same_hh & ((dates[1:] - dates[:-1]) == np.timedelta64(1, "D"))
    gaps = int(np.count_nonzero(same_hh & ~consecutive))
    idx = np.flatnonzero(consecutive)
    if idx.size == 0:
        raise ContractError("no consecutive day pairs found")
    return ProfileDataset(
        prof[idx + 1],
        prof[idx],
        [f"c_prev_{t}" for t in range(dataset.T)],
        resolution=dataset.resolution,
        household=hh[idx + 1],
        date=dates[idx + 1],
        meta={"skipped_gaps": gaps},
    )


# --- synthetic data ------------------------------------------------------


def daily_shapes(T: int) -> tuple[np.ndarray, np.ndarray]:
    """Morning-peak and evening-peak reference shapes (kW) over one day."""
    hours = (np.arange(T) + 0.5) * 24.0 / T

    def bump(center, width):
        d = np.minimum(np.abs(hours - center), 24.0 - np.abs(hours - center))
        return np.exp(-0.5 * (d / width) ** 2)

    base = 0.25 + 0.1 * bump(13.0, 4.0)
    morning = base + 1.2 * bump(7.5, 1.2) + 0.3 * bump(19.5, 2.0)
    evening = base + 0.3 * bump(7.5, 1.2) + 1.4 * bump(19.5, 1.8)
    return morning, evening


def ar1_covariance(T: int, rho: float, sigma: float = 1.0) -> np.ndarray:
    lags = np.abs(np.subtract.outer(np.arange(T), np.arange(T)))
    return sigma**2 * rho**lags


def synth_generate(kind: str, N: int, T: int, seed=0, **params) -> ProfileDataset:
    """Desk-scale synthetic datasets.

    ``correlated-gaussian``
        ``N(mu, sigma^2 rho^|i-j|)``; params ``mu`` (scalar or length T),
        ``sigma``, ``rho``.
    ``archetype-mixture``
        Households with persistent blends of a morning-peak and an
        evening-peak shape, a household amplitude, day-to-day AR(1) drift and
        multiplicative noise. Rows carry household ids and consecutive dates.
        Params ``days`` per household (default 30), ``drift``, ``noise``.
    ``condition-scaled``
        ``c * shape + noise`` with ``c ~ U(0.5, 2)`` stored as ``c_scale``.
        Params ``noise``.
    """
    rng = np.random.default_rng(seed)
    if kind == "correlated-gaussian":
        rho = float(params.get("rho", 0.8))
        if not -1 < rho < 1:
            raise SpecError(f"rho must lie in (-1, 1), got {rho}")
        sigma = float(params.get("sigma", 1.0))
        mu = np.broadcast_to(np.asarray(params.get("mu", 0.0), dtype=np.float64), (T,))
        x = rng.multivariate_normal(mu, ar1_covariance(T, rho, sigma), size=N, method="cholesky")
        return ProfileDataset(x, resolution=params.get("resolution"), meta={"kind": kind})
    if kind == "archetype-mixture":
        days = int(params.get("days", 30))
        drift = float(params.get("drift", 0.08))
        noise = float(params.get("noise", 0.08))
        morning, evening = daily_shapes(T)
        n_house = math.ceil(N / days)
        profiles, households, dates = [], [], []
        start = np.datetime64("2023-01-01")
        for h in range(n_house):
            w_house = rng.uniform(0.0, 1.0)
            amp = rng.lognormal(0.0, 0.35)
            dev = 0.0
            for d in range(days):
                if len(profiles) == N:
                    break
                dev = 0.7 * dev + drift * rng.standard_normal()
                w = np.clip(w_house + dev, 0.0, 1.0)
                shape = w * morning + (1.0 - w) * evening
                profiles.append(amp * shape * np.exp(noise * rng.standard_normal(T)))
                households.append(f"h{h:04d}")
                dates.append(start + np.timedelta64(d, "D"))
        return ProfileDataset(
            np.array(profiles),
            household=np.array(households),
            date=np.array(dates, dtype="datetime64[D]"),
            meta={"kind": kind},
        )
    if kind == "condition-scaled":
        noise = float(params.get("noise", 0.05))
        morning, evening = daily_shapes(T)
        base = 0.5 * (morning + evening)
        c = rng.uniform(0.5, 2.0, size=N)
        x = np.maximum(c[:, None] * base + noise * rng.standard_normal((N, T)), 0.0)
        return ProfileDataset(x, c[:, None], ["c_scale"], meta={"kind": kind})
    raise SpecError(f"unknown synthetic dataset kind {kind!r}")
