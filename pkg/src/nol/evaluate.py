"""Progressive validation, learning-rate sweeps, and the significance test.

Progressive validation measures each example's loss before its update, so the
running average estimates generalization without a holdout set. Sweeps search
a geometric learning-rate grid per learner; significance between two loss
sequences is decided by disjointness of relative-entropy Chernoff confidence
intervals on the means.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from scipy.optimize import brentq

from .core import Loss, SparseExample, get_loss
from .data import regression_loss_scale
from .errors import DataFormatError
from .learners import Learner, LearnerConfig


def default_eta_grid(lo_exp: int = -20, hi_exp: int = 6, base: float = 2.0) -> List[float]:
    """Geometric grid base^lo .. base^hi, wide enough to cover the optimal
    rates seen anywhere between ~1e-7 and 16."""
    return [base ** e for e in range(lo_exp, hi_exp + 1)]


@dataclass
class ProgressiveResult:
    """Per-example progressive losses for one run."""

    training_losses: List[float]
    eval_losses: List[float]      # 0-1 loss (classification) or scaled squared
    average_training_loss: float
    average_eval_loss: float
    n_examples: int


def progressive_validation(config: LearnerConfig, loss: Loss,
                           examples: Sequence[SparseExample],
                           task: str = "classification",
                           loss_scale: Optional[float] = None) -> ProgressiveResult:
    """Run a learner over the stream, scoring each example before updating.

    Classification reports 0-1 loss on sign(yhat) alongside the training
    loss; ties (yhat == 0) count as errors. Regression divides squared loss
    by the worst-possible-loss scale (max - min)^2.
    """
    if task == "regression" and loss_scale is None:
        loss_scale = regression_loss_scale(ex.label for ex in examples)
    learner = Learner(config, loss)
    train, ev = [], []
    for ex in examples:
        yhat, lval = learner.observe(ex)
        train.append(lval)
        if task == "classification":
            pred_label = 1.0 if yhat > 0 else (-1.0 if yhat < 0 else 0.0)
            ev.append(0.0 if pred_label == ex.label else 1.0)
        else:
            ev.append((yhat - ex.label) ** 2 / loss_scale)
    n = len(train)
    if n == 0:
        raise ValueError("no examples")
    return ProgressiveResult(train, ev, sum(train) / n, sum(ev) / n, n)


# ---------------------------------------------------------------------------
# One-against-all multiclass reduction
#
# The reduction used for multiclass 0-1 loss: one binary learner per class
# sharing the same learning rate, predicting the argmax of the raw scores.

def multiclass_progressive(config: LearnerConfig, loss: Loss,
                           examples: Sequence[SparseExample]) -> ProgressiveResult:
    learners: Dict[float, Learner] = {}
    classes: List[float] = []
    train, ev = [], []
    for ex in examples:
        if ex.label not in learners:
            learners[ex.label] = Learner(config, loss)
            classes.append(ex.label)
        scores = {c: learners[c].predict(ex) for c in classes}
        pred = max(classes, key=lambda c: scores[c])
        ev.append(0.0 if pred == ex.label else 1.0)
        round_train = 0.0
        for c in classes:
            binary = SparseExample(ex.features, 1.0 if c == ex.label else -1.0)
            _, lval = learners[c].observe(binary)
            round_train += lval
        train.append(round_train)
    n = len(train)
    return ProgressiveResult(train, ev, sum(train) / n, sum(ev) / n, n)


# ---------------------------------------------------------------------------
# Learning-rate sweeps

@dataclass
class SweepSpec:
    kinds: List[str]
    loss: str
    eta_grid: List[float] = field(default_factory=default_eta_grid)
    task: str = "classification"
    multiclass: bool = False
    clip_c: Optional[float] = None
    normalization: str = "none"

    def __post_init__(self):
        if not self.eta_grid:
            raise ValueError("eta grid must be nonempty")
        if any(b <= a for a, b in zip(self.eta_grid, self.eta_grid[1:])):
            raise ValueError("eta grid must be strictly increasing")


@dataclass
class SweepCell:
    kind: str
    eta: float
    eval_loss: Optional[float]
    training_loss: Optional[float]
    error: Optional[str] = None


@dataclass
class ComparisonReport:
    spec: SweepSpec
    cells: List[SweepCell]
    best: Dict[str, Tuple[float, float]]   # kind -> (eta*, best eval loss)


def _max_workers() -> int:
    env = os.environ.get("NOL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def sweep(spec: SweepSpec, examples: Sequence[SparseExample]) -> ComparisonReport:
    """Run every (kind, eta) pair independently; failures mark their cell
    without aborting the sweep. Results are gathered by cell index so the
    report is deterministic regardless of parallelism."""
    loss = get_loss(spec.loss)
    loss_scale = None
    if spec.task == "regression":
        loss_scale = regression_loss_scale(ex.label for ex in examples)

    jobs = [(kind, eta) for kind in spec.kinds for eta in spec.eta_grid]

    def run_cell(job):
        kind, eta = job
        try:
            config = LearnerConfig(kind=kind, eta=eta, clip_c=spec.clip_c)
            if spec.multiclass:
                res = multiclass_progressive(config, loss, examples)
            else:
                res = progressive_validation(config, loss, examples, spec.task, loss_scale)
            return SweepCell(kind, eta, res.average_eval_loss, res.average_training_loss)
        except Exception as e:  # failed cells are reported, not fatal
            return SweepCell(kind, eta, None, None, error=str(e))

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, jobs))
    else:
        cells = [run_cell(j) for j in jobs]

    best: Dict[str, Tuple[float, float]] = {}
    for cell in cells:
        if cell.eval_loss is None:
            continue
        cur = best.get(cell.kind)
        if cur is None or cell.eval_loss < cur[1]:
            best[cell.kind] = (cell.eta, cell.eval_loss)
    return ComparisonReport(spec, cells, best)


def plot_csv_rows(report: ComparisonReport) -> List[str]:
    """CSV lines "learner,eta,loss" for external plotting."""
    rows = ["learner,eta,loss"]
    for cell in report.cells:
        loss_s = "" if cell.eval_loss is None else repr(cell.eval_loss)
        rows.append(f"{cell.kind},{cell.eta!r},{loss_s}")
    return rows


# ---------------------------------------------------------------------------
# Relative-entropy Chernoff significance test

def _kl_bernoulli(p: float, q: float) -> float:
    eps = 1e-15
    q = min(max(q, eps), 1.0 - eps)
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def kl_confidence_interval(mean: float, n: int, alpha: float) -> Tuple[float, float]:
    """Two-sided interval on the true mean of [0,1]-bounded variables by
    inverting the KL Chernoff bound at failure probability alpha per tail."""
    if not 0.0 <= mean <= 1.0:
        raise ValueError("mean of bounded losses must lie in [0, 1]")
    target = math.log(1.0 / alpha) / n
    if mean >= 1.0 or _kl_bernoulli(mean, 1.0 - 1e-15) <= target:
        hi = 1.0
    else:
        hi = brentq(lambda q: _kl_bernoulli(mean, q) - target, mean, 1.0 - 1e-15)
    if mean <= 0.0 or _kl_bernoulli(mean, 1e-15) <= target:
        lo = 0.0
    else:
        lo = brentq(lambda q: _kl_bernoulli(mean, q) - target, 1e-15, mean)
    return lo, hi


@dataclass
class SignificanceVerdict:
    significant: bool
    interval_a: Tuple[float, float]
    interval_b: Tuple[float, float]
    mean_a: float
    mean_b: float


def significance(losses_a: Sequence[float], losses_b: Sequence[float],
                 failure_probability: float = 0.1) -> SignificanceVerdict:
    """Compare two per-example loss sequences bounded in [0, 1].

    The total failure budget is split over two sequences and two tails
    (alpha/4 per tail per sequence); the verdict is significant iff the two
    confidence intervals are disjoint.
    """
    if len(losses_a) != len(losses_b):
        raise ValueError("loss sequences must have equal length")
    if not losses_a:
        raise ValueError("empty loss sequences")
    for seq in (losses_a, losses_b):
        for v in seq:
            if not 0.0 <= v <= 1.0:
                raise ValueError("losses must be bounded in [0, 1]")
    n = len(losses_a)
    alpha = failure_probability / 4.0
    ma = sum(losses_a) / n
    mb = sum(losses_b) / n
    ia = kl_confidence_interval(ma, n, alpha)
    ib = kl_confidence_interval(mb, n, alpha)
    disjoint = ia[1] < ib[0] or ib[1] < ia[0]
    return SignificanceVerdict(disjoint, ia, ib, ma, mb)
