"""Dataset readers, pre-normalizers, and synthetic stream generators."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .core import SparseExample
from .errors import DataFormatError


# ---------------------------------------------------------------------------
# svmlight-like text format: "label idx:val idx:val ..."

def parse_svmlight_line(line: str, line_number: int = 0) -> SparseExample:
    parts = line.split()
    if not parts:
        raise DataFormatError(f"line {line_number}: empty line")
    try:
        label = float(parts[0])
    except ValueError:
        raise DataFormatError(f"line {line_number}: bad label {parts[0]!r}")
    feats = []
    prev = -1
    for tok in parts[1:]:
        idx_s, _, val_s = tok.partition(":")
        try:
            idx = int(idx_s)
            val = float(val_s)
        except ValueError:
            raise DataFormatError(f"line {line_number}: malformed token {tok!r}")
        if idx <= prev:
            raise DataFormatError(
                f"line {line_number}: indices must be strictly increasing, got {idx} after {prev}")
        if idx < 0:
            raise DataFormatError(f"line {line_number}: negative index {idx}")
        if not math.isfinite(val):
            raise DataFormatError(f"line {line_number}: non-finite value in {tok!r}")
        prev = idx
        feats.append((idx, val))
    return SparseExample(tuple(feats), label)


def serialize_svmlight(ex: SparseExample) -> str:
    label = ex.label
    head = repr(int(label)) if label == int(label) else repr(label)
    return " ".join([head] + [f"{i}:{v!r}" for i, v in ex.features])


def read_svmlight(lines: Iterable[str]) -> Iterator[SparseExample]:
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        yield parse_svmlight_line(line, n)


# ---------------------------------------------------------------------------
# Delimited files with a header row

def _sniff_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def read_delimited(lines: Iterable[str], label_column: Optional[str] = None,
                   label_transform: Optional[dict] = None) -> Iterator[SparseExample]:
    """CSV/TSV with header; the last column is the label unless named.

    Numeric columns map to one feature each; non-numeric columns are one-hot
    expanded with a stable value -> index mapping (value 1.0). Label values
    may be remapped via label_transform (e.g. {0: -1, 1: 1}).
    """
    it = iter(lines)
    try:
        header_line = next(it)
    except StopIteration:
        raise DataFormatError("empty delimited file")
    delim = _sniff_delimiter(header_line)
    reader = csv.reader(io.StringIO(header_line), delimiter=delim)
    columns = next(reader)
    if label_column is None:
        label_idx = len(columns) - 1
    else:
        try:
            label_idx = columns.index(label_column)
        except ValueError:
            raise DataFormatError(f"label column {label_column!r} not in header")

    feature_cols = [j for j in range(len(columns)) if j != label_idx]
    # one slot per numeric column; categorical levels get fresh indices
    slot: Dict[int, int] = {j: k for k, j in enumerate(feature_cols)}
    next_index = len(feature_cols)
    categories: Dict[tuple, int] = {}

    for n, line in enumerate(it, start=2):
        line = line.rstrip("\n")
        if not line:
            continue
        row = next(csv.reader(io.StringIO(line), delimiter=delim))
        if len(row) != len(columns):
            raise DataFormatError(f"line {n}: expected {len(columns)} fields, got {len(row)}")
        feats: Dict[int, float] = {}
        for j in feature_cols:
            cell = row[j].strip()
            if cell == "":
                continue
            try:
                val = float(cell)
            except ValueError:
                key = (j, cell)
                if key not in categories:
                    categories[key] = next_index
                    next_index += 1
                feats[categories[key]] = 1.0
                continue
            if not math.isfinite(val):
                raise DataFormatError(f"line {n}: non-finite value {cell!r}")
            if val != 0.0:
                feats[slot[j]] = val
        label_cell = row[label_idx].strip()
        try:
            label = float(label_cell)
        except ValueError:
            if label_transform and label_cell in label_transform:
                label = float(label_transform[label_cell])
            else:
                raise DataFormatError(f"line {n}: bad label {label_cell!r}")
        if label_transform and label in label_transform:
            label = float(label_transform[label])
        yield SparseExample.from_dict(feats, label)


# ---------------------------------------------------------------------------
# Pre-normalizers (two-pass)

@dataclass
class NormalizerStats:
    """Fixed per-coordinate statistics from a dedicated first pass."""

    mode: str                                   # "maxnorm" | "sqnorm"
    scale: Dict[int, float] = field(default_factory=dict)  # divide by this
    count: int = 0

    def apply(self, ex: SparseExample) -> SparseExample:
        pairs = tuple(
            (i, v / self.scale[i] if self.scale.get(i, 0.0) > 0.0 else v)
            for i, v in ex.features
        )
        return SparseExample(pairs, ex.label)


def compute_normalizer(examples: Sequence[SparseExample], mode: str) -> NormalizerStats:
    """maxnorm: divide each feature by its max |x_i|. sqnorm: divide by the
    root of the uncentered second moment over all rows (zeros included)."""
    if mode not in ("maxnorm", "sqnorm"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    n = len(examples)
    stats: Dict[int, float] = {}
    if mode == "maxnorm":
        for ex in examples:
            for i, v in ex.features:
                av = abs(v)
                if av > stats.get(i, 0.0):
                    stats[i] = av
    else:
        sums: Dict[int, float] = {}
        for ex in examples:
            for i, v in ex.features:
                sums[i] = sums.get(i, 0.0) + v * v
        stats = {i: math.sqrt(s / n) for i, s in sums.items() if s > 0.0}
    return NormalizerStats(mode, stats, n)


def prenormalize(examples: Sequence[SparseExample], mode: str):
    """(stats, normalized list). Coordinates with zero statistic pass
    through unchanged."""
    stats = compute_normalizer(examples, mode)
    return stats, [stats.apply(ex) for ex in examples]


def regression_loss_scale(labels: Iterable[float]) -> float:
    """(max - min)^2 of the labels: the worst possible squared loss, used to
    normalize reported regression losses into [0, 1]."""
    labels = list(labels)
    if not labels:
        raise DataFormatError("no labels")
    lo, hi = min(labels), max(labels)
    if lo == hi:
        raise DataFormatError("constant labels: regression loss scale undefined")
    return (hi - lo) ** 2


# ---------------------------------------------------------------------------
# Synthetic generators

def synth_figure1(s: float, T: int, seed: int = 0, margin: float = 0.05) -> List[SparseExample]:
    """Two-dimensional separable stream with the first feature scaled by s.

    Base inputs are uniform on [-1, 1]^2 (resampled to keep a small margin),
    labels are the sign of (1, 1) . x. The base stream depends only on the
    seed, so different s values yield streams identical up to the scaling.
    """
    if not s > 0:
        raise ValueError("scale s must be strictly positive")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < T:
        x = rng.uniform(-1.0, 1.0, size=2)
        raw = x[0] + x[1]
        if abs(raw) < margin:
            continue
        y = 1.0 if raw > 0 else -1.0
        out.append(SparseExample(((0, s * x[0]), (1, x[1])), y))
    return out


def synth_scaled(d: int, T: int, seed: int = 0, log10_scale_lo: float = -3.0,
                 log10_scale_hi: float = 3.0, flip: float = 0.05) -> List[SparseExample]:
    """Separable-ish classification stream whose per-coordinate scales are
    log-uniform over the requested range; used for learning-rate-range and
    invariance experiments."""
    rng = np.random.default_rng(seed)
    scales = 10.0 ** rng.uniform(log10_scale_lo, log10_scale_hi, size=d)
    w_true = rng.normal(size=d)
    out = []
    for _ in range(T):
        base = rng.uniform(-1.0, 1.0, size=d)
        raw = w_true @ base
        y = 1.0 if raw >= 0 else -1.0
        if rng.random() < flip:
            y = -y
        x = base * scales
        out.append(SparseExample(tuple((j, x[j]) for j in range(d) if x[j] != 0.0), y))
    return out


def parse_synth_spec(spec: str):
    """CLI generator specs, e.g. "figure1:s=1,T=1000" or
    "scaled:d=5,T=2000,lo=-3,hi=3"."""
    name, _, args_s = spec.partition(":")
    args = {}
    if args_s:
        for part in args_s.split(","):
            k, _, v = part.partition("=")
            if not _:
                raise DataFormatError(f"bad synth spec fragment {part!r}")
            args[k.strip()] = v.strip()
    try:
        if name == "figure1":
            s = float(args.get("s", 1.0))
            T = int(args.get("T", 1000))
            return lambda seed: synth_figure1(s=s, T=T, seed=seed)
        if name == "scaled":
            d = int(args.get("d", 5))
            T = int(args.get("T", 1000))
            lo = float(args.get("lo", -3.0))
            hi = float(args.get("hi", 3.0))
            return lambda seed: synth_scaled(
                d=d, T=T, seed=seed, log10_scale_lo=lo, log10_scale_hi=hi)
    except ValueError as e:
        raise DataFormatError(f"bad synth spec {spec!r}: {e}")
    raise DataFormatError(f"unknown synth generator {name!r}")
