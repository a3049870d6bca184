"""Ingestion of county drought CSVs and construction of training samples.

Input formats
-------------
Time-series CSV: header ``fips,date,<channel...>,score`` with one row per
county per calendar day (``date`` is YYYY-MM-DD, an empty ``score`` cell
means no assessment was released that day).  Static-features CSV: header
``fips,<feature...>``; a configured subset of the feature columns is
treated as categorical and dictionary-encoded (code 0 is reserved for
labels unseen at fit time).

A sample is built for every score-bearing date with a full look-back
window (the preceding ``window_days`` days plus the same days one year
earlier, doubling the channel count) and a full six-week score future.
Candidates lacking either are dropped and counted, never fatal.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .autodiff import RngState
from .errors import ConfigError, DataError, FormatError, SchemaError

WINDOW_DAYS = 180
YEAR_SHIFT_DAYS = 365
TARGET_WEEKS = 6
SCORE_MIN, SCORE_MAX = 0.0, 5.0


@dataclass
class CountyTimeSeries:
    fips: str
    dates: list[date]  # strictly increasing, one-day steps
    measurements: np.ndarray  # (P, M)
    scores: dict[date, float] = field(default_factory=dict)


@dataclass
class StaticFeatures:
    fips: str
    numeric: np.ndarray  # (f_n,)
    categorical: np.ndarray  # (f_d,) integer codes


@dataclass
class Sample:
    fips: str
    anchor_date: date
    x: np.ndarray  # (T, 2M): current-year channels then previous-year channels
    s_n: np.ndarray
    s_d: np.ndarray
    y: np.ndarray  # (6,)


@dataclass
class CategoricalEncoder:
    """Label <-> dense-code maps for the configured categorical columns."""

    columns: list[str]
    numeric_columns: list[str]
    label_to_code: dict[str, dict[str, int]]

    @property
    def vocab_sizes(self) -> list[int]:
        return [len(self.label_to_code[c]) + 1 for c in self.columns]

    def encode(self, column: str, label: str) -> int:
        return self.label_to_code[column].get(label, 0)

    def decode(self, column: str, code: int) -> str:
        if code == 0:
            return "<unknown>"
        for label, c in self.label_to_code[column].items():
            if c == code:
                return label
        raise DataError(f"code {code} not present in column {column!r}")

    def save(self, path) -> None:
        lines = ["column,label,code"]
        for column in self.columns:
            for label, code in sorted(self.label_to_code[column].items(), key=lambda kv: kv[1]):
                lines.append(f"{column},{label},{code}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, numeric_columns: list[str] | None = None) -> "CategoricalEncoder":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != "column,label,code":
            raise FormatError(f"{path}: not a categorical dictionary file")
        mapping: dict[str, dict[str, int]] = {}
        for line in lines[1:]:
            column, label, code = line.split(",", 2)
            mapping.setdefault(column, {})[label] = int(code)
        return cls(list(mapping), numeric_columns or [], mapping)


def _parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError as exc:
        raise SchemaError(f"bad date {text!r}: {exc}") from None


def _interpolate_column(values: np.ndarray, present: np.ndarray, max_gap: int,
                        fips: str, name: str) -> np.ndarray:
    """Linear interpolation over missing entries, edges filled flat."""
    if present.all():
        return values
    if not present.any():
        raise DataError(f"county {fips}: channel {name!r} entirely missing")
    idx = np.flatnonzero(present)
    gaps = np.diff(idx) - 1
    if gaps.size and gaps.max() > max_gap:
        raise DataError(
            f"county {fips}: channel {name!r} has a {int(gaps.max())}-day gap "
            f"(limit {max_gap})"
        )
    lead = idx[0]
    trail = values.size - 1 - idx[-1]
    if max(lead, trail) > max_gap:
        raise DataError(f"county {fips}: channel {name!r} missing edge run exceeds {max_gap} days")
    out = values.copy()
    out[~present] = np.interp(np.flatnonzero(~present), idx, values[idx])
    return out


def load_timeseries(path, max_gap_days: int = 14,
                    report: list[str] | None = None) -> dict[str, CountyTimeSeries]:
    """Parse the daily time-series CSV into per-county series.

    Channel names and count come from the header; per-county rows must form
    a contiguous daily calendar.  Counties whose measurement gaps exceed
    ``max_gap_days`` are dropped and reported.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        required = {"fips", "date", "score"}
        missing = required - set(header)
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        fips_col = header.index("fips")
        date_col = header.index("date")
        score_col = header.index("score")
        channel_cols = [i for i, name in enumerate(header)
                        if i not in (fips_col, date_col, score_col)]
        channel_names = [header[i] for i in channel_cols]

        rows: dict[str, list[tuple[date, list[str], str]]] = {}
        for row in reader:
            if not row:
                continue
            rows.setdefault(row[fips_col], []).append(
                (_parse_date(row[date_col]), [row[i] for i in channel_cols], row[score_col])
            )

    series: dict[str, CountyTimeSeries] = {}
    for fips, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        dates = [e[0] for e in entries]
        for prev, cur in zip(dates, dates[1:]):
            if cur == prev:
                raise DataError(f"county {fips}: duplicate date {cur}")
            if (cur - prev).days != 1:
                raise DataError(f"county {fips}: gap between {prev} and {cur}")

        raw = np.full((len(entries), len(channel_cols)), np.nan)
        present = np.zeros_like(raw, dtype=bool)
        scores: dict[date, float] = {}
        for r, (day, cells, score_text) in enumerate(entries):
            for c, cell in enumerate(cells):
                if cell != "":
                    raw[r, c] = float(cell)
                    present[r, c] = True
            if score_text != "":
                score = float(score_text)
                if not SCORE_MIN <= score <= SCORE_MAX:
                    raise DataError(f"county {fips}: score {score} outside [0, 5] at {day}")
                scores[day] = score

        try:
            for c, name in enumerate(channel_names):
                raw[:, c] = _interpolate_column(raw[:, c], present[:, c], max_gap_days, fips, name)
        except DataError as exc:
            if report is not None:
                report.append(f"dropped county {fips}: {exc}")
            continue
        series[fips] = CountyTimeSeries(fips, dates, raw, scores)

    if not series:
        raise DataError(f"{path}: no usable counties")
    first = next(iter(series.values()))
    series_channels = first.measurements.shape[1]
    if series_channels == 0:
        raise SchemaError(f"{path}: no measurement channels")
    return series


def channel_names_of(path) -> list[str]:
    with Path(path).open(newline="") as fh:
        header = next(csv.reader(fh))
    return [name for name in header if name not in ("fips", "date", "score")]


def load_statics(path, categorical_columns: list[str],
                 encoder: CategoricalEncoder | None = None,
                 ) -> tuple[dict[str, StaticFeatures], CategoricalEncoder]:
    """Parse the static-features CSV; returns per-county features plus the
    label dictionary used for encoding (fit here unless one is supplied)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if "fips" not in header:
            raise SchemaError(f"{path}: missing fips column")
        missing = set(categorical_columns) - set(header)
        if missing:
            raise SchemaError(f"{path}: categorical columns {sorted(missing)} not present")
        fips_col = header.index("fips")
        cat_cols = [header.index(c) for c in categorical_columns]
        num_names = [name for i, name in enumerate(header)
                     if i != fips_col and i not in cat_cols]
        num_cols = [header.index(c) for c in num_names]
        rows = [row for row in reader if row]

    if encoder is None:
        label_to_code: dict[str, dict[str, int]] = {}
        for name, col in zip(categorical_columns, cat_cols):
            labels = sorted({row[col] for row in rows})
            label_to_code[name] = {label: i + 1 for i, label in enumerate(labels)}
        encoder = CategoricalEncoder(list(categorical_columns), num_names, label_to_code)
    elif list(categorical_columns) != encoder.columns:
        raise ConfigError(
            f"categorical columns {list(categorical_columns)} do not match the "
            f"fitted dictionary order {encoder.columns}"
        )

    statics: dict[str, StaticFeatures] = {}
    for row in rows:
        fips = row[fips_col]
        if fips in statics:
            raise DataError(f"duplicate statics row for county {fips}")
        numeric = np.array([float(row[i]) for i in num_cols])
        codes = np.array(
            [encoder.encode(name, row[col]) for name, col in zip(categorical_columns, cat_cols)],
            dtype=np.int64,
        )
        statics[fips] = StaticFeatures(fips, numeric, codes)
    if not statics:
        raise DataError(f"{path}: no static rows")
    return statics, encoder


@dataclass
class BuildReport:
    built: int = 0
    dropped_missing_history: int = 0
    dropped_missing_future: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_missing_history + self.dropped_missing_future

    def describe(self) -> str:
        return (
            f"built {self.built} samples; dropped {self.dropped_missing_history} "
            f"without full history, {self.dropped_missing_future} without a full "
            f"{TARGET_WEEKS}-week future"
        )


def build_samples(series: dict[str, CountyTimeSeries],
                  statics: dict[str, StaticFeatures],
                  window_days: int = WINDOW_DAYS,
                  target_phase: str = "anchor",
                  ) -> tuple[list[Sample], BuildReport]:
    """One candidate per score-bearing date; the window covers the
    ``window_days`` days before the anchor (exclusive) plus the same
    calendar days shifted back one year.

    ``target_phase``: "anchor" takes the anchor's own score as week 1;
    "next" starts the six targets at the following release.
    """
    if target_phase not in ("anchor", "next"):
        raise ConfigError(f"target_phase must be 'anchor' or 'next', got {target_phase!r}")
    samples: list[Sample] = []
    report = BuildReport()
    history_needed = window_days + YEAR_SHIFT_DAYS
    for fips in sorted(series):
        county = series[fips]
        if fips not in statics:
            raise DataError(f"county {fips} has time series but no static features")
        static = statics[fips]
        index_of = {d: i for i, d in enumerate(county.dates)}
        score_dates = sorted(county.scores)
        for pos, anchor in enumerate(score_dates):
            start = pos if target_phase == "anchor" else pos + 1
            targets = score_dates[start:start + TARGET_WEEKS]
            if len(targets) < TARGET_WEEKS:
                report.dropped_missing_future += 1
                continue
            ti = index_of[anchor]
            if ti < history_needed:
                report.dropped_missing_history += 1
                continue
            current = county.measurements[ti - window_days:ti, :]
            previous = county.measurements[ti - window_days - YEAR_SHIFT_DAYS:ti - YEAR_SHIFT_DAYS, :]
            x = np.concatenate([current, previous], axis=1)
            y = np.array([county.scores[d] for d in targets])
            samples.append(Sample(fips, anchor, x, static.numeric.copy(),
                                  static.categorical.copy(), y))
            report.built += 1
    return samples, report


@dataclass
class Normalizer:
    """Per-channel z-score statistics fitted on a training split.

    Time-series stats pool a channel's current-year and previous-year
    columns; targets are never normalized.  Constant channels keep std 1.
    """

    channel_names: list[str]
    channel_mean: np.ndarray
    channel_std: np.ndarray
    static_names: list[str]
    static_mean: np.ndarray
    static_std: np.ndarray

    def apply(self, samples: list[Sample]) -> list[Sample]:
        out = []
        channels = len(self.channel_names)
        for s in samples:
            if s.x.shape[1] != 2 * channels:
                raise DataError(
                    f"sample has {s.x.shape[1]} columns, normalizer expects {2 * channels}"
                )
            x = s.x.copy()
            for block in (slice(0, channels), slice(channels, 2 * channels)):
                x[:, block] = (x[:, block] - self.channel_mean) / self.channel_std
            s_n = (s.s_n - self.static_mean) / self.static_std
            out.append(Sample(s.fips, s.anchor_date, x, s_n, s.s_d.copy(), s.y.copy()))
        return out

    def invert_timeseries(self, x: np.ndarray) -> np.ndarray:
        channels = len(self.channel_names)
        out = x.copy()
        for block in (slice(0, channels), slice(channels, 2 * channels)):
            out[:, block] = out[:, block] * self.channel_std + self.channel_mean
        return out

    def save(self, path) -> None:
        lines = ["channel,mean,std"]
        for name, m, s in zip(self.channel_names, self.channel_mean, self.channel_std):
            lines.append(f"ts.{name},{float(m)!r},{float(s)!r}")
        for name, m, s in zip(self.static_names, self.static_mean, self.static_std):
            lines.append(f"static.{name},{float(m)!r},{float(s)!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Normalizer":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != "channel,mean,std":
            raise FormatError(f"{path}: not a normalizer stats file")
        ts, st = [], []
        for line in lines[1:]:
            name, mean, std = line.split(",")
            (ts if name.startswith("ts.") else st).append(
                (name.split(".", 1)[1], float(mean), float(std))
            )
        return cls(
            [n for n, _, _ in ts],
            np.array([m for _, m, _ in ts]),
            np.array([s for _, _, s in ts]),
            [n for n, _, _ in st],
            np.array([m for _, m, _ in st]),
            np.array([s for _, _, s in st]),
        )


def fit_normalizer(samples: list[Sample],
                   channel_names: list[str] | None = None,
                   static_names: list[str] | None = None) -> Normalizer:
    if not samples:
        raise DataError("cannot fit a normalizer on an empty sample set")
    channels = samples[0].x.shape[1] // 2
    channel_names = channel_names or [f"chan{i}" for i in range(channels)]
    static_names = static_names or [f"static{i}" for i in range(samples[0].s_n.size)]

    pooled = np.concatenate(
        [np.concatenate([s.x[:, :channels], s.x[:, channels:]], axis=0) for s in samples]
    )
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[std == 0.0] = 1.0

    if samples[0].s_n.size:
        stat = np.stack([s.s_n for s in samples])
        s_mean = stat.mean(axis=0)
        s_std = stat.std(axis=0)
        s_std[s_std == 0.0] = 1.0
    else:
        s_mean = np.zeros(0)
        s_std = np.ones(0)
    return Normalizer(channel_names, mean, std, static_names, s_mean, s_std)


def filter_by_state(samples: list[Sample], state_prefixes: list[str]) -> list[Sample]:
    """Keep samples whose FIPS starts with any of the 2-character prefixes."""
    kept = [s for s in samples if any(s.fips.startswith(p) for p in state_prefixes)]
    if not kept:
        warnings.warn(f"state filter {state_prefixes} matched no samples", stacklevel=2)
    return kept


def kfold_split(samples: list[Sample], k: int = 5,
                seed: int = 0) -> list[tuple[list[Sample], list[Sample]]]:
    """Seeded shuffle into k folds; each (train, validation) pair uses one
    fold as validation, and the validation folds partition the samples."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > len(samples):
        raise ConfigError(f"k={k} exceeds the {len(samples)} available samples")
    order = RngState(seed).split("kfold").permutation(len(samples))
    folds = np.array_split(order, k)
    pairs = []
    for i in range(k):
        val_idx = set(folds[i].tolist())
        train = [samples[j] for j in order if j not in val_idx]
        val = [samples[j] for j in folds[i]]
        pairs.append((train, val))
    return pairs


_CACHE_MAGIC = b"HMSAMP1"


def save_samples(samples: list[Sample], path) -> None:
    """Binary sample cache; little-endian, deterministic bytes."""
    chunks = [_CACHE_MAGIC, struct.pack("<I", len(samples))]
    for s in samples:
        fips = s.fips.encode()
        iso = s.anchor_date.isoformat().encode()
        chunks.append(struct.pack("<I", len(fips)))
        chunks.append(fips)
        chunks.append(struct.pack("<I", len(iso)))
        chunks.append(iso)
        chunks.append(struct.pack("<IIII", s.x.shape[0], s.x.shape[1], s.s_n.size, s.s_d.size))
        chunks.append(np.ascontiguousarray(s.x, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(s.s_n, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(s.s_d, dtype="<i8").tobytes())
        chunks.append(np.ascontiguousarray(s.y, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_samples(path) -> list[Sample]:
    blob = Path(path).read_bytes()
    if blob[: len(_CACHE_MAGIC)] != _CACHE_MAGIC:
        raise FormatError(f"{path}: bad sample-cache magic")
    view = memoryview(blob)
    offset = len(_CACHE_MAGIC)

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated sample cache")
        piece = view[offset:offset + n]
        offset += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    samples = []
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        fips = bytes(take(n)).decode()
        (n,) = struct.unpack("<I", take(4))
        anchor = date.fromisoformat(bytes(take(n)).decode())
        t, m2, fn, fd = struct.unpack("<IIII", take(16))
        x = np.frombuffer(take(t * m2 * 8), dtype="<f8").reshape(t, m2).copy()
        s_n = np.frombuffer(take(fn * 8), dtype="<f8").copy()
        s_d = np.frombuffer(take(fd * 8), dtype="<i8").copy()
        y = np.frombuffer(take(6 * 8), dtype="<f8").copy()
        samples.append(Sample(fips, anchor, x, s_n, s_d, y))
    return samples


def split_fractions(samples: list[Sample], val_fraction: float, test_fraction: float,
                    seed: int) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Seeded random split used when no explicit validation/test files exist."""
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ConfigError("val/test fractions must be nonnegative and sum below 1")
    order = RngState(seed).split("holdout").permutation(len(samples))
    n_val = int(round(len(samples) * val_fraction))
    n_test = int(round(len(samples) * test_fraction))
    val = [samples[i] for i in order[:n_val]]
    test = [samples[i] for i in order[n_val:n_val + n_test]]
    train = [samples[i] for i in order[n_val + n_test:]]
    return train, val, test
