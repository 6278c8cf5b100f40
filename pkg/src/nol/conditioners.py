"""Diagonal conditioners for the update w_{t+1} = w_t - A_t^{-1} g_t.

Three recipes produce the diagonal A_t:

* hindsight    -- the minimax-optimal fixed diagonal, computable only after
                  the full gradient log is known;
* transductive -- two-pass: the enclosing box S is learned on a first pass,
                  gradients accumulate online on the second;
* streaming    -- one-pass: both the box and the gradient sums are running
                  estimates.

The module also provides the metric projection onto the comparator ball
{w : ||S^{-1/2} w||_q <= C} for q in {1, 2}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping

from scipy.optimize import brentq

from .core import SparseExample

SQRT2 = math.sqrt(2.0)


@dataclass
class EnclosingBox:
    """Per-coordinate running max |x_i|; the minimum-volume axis-aligned box.

    S_ii = 1 / m_i^2 on the support; coordinates never seen nonzero have no
    S entry and are excluded from conditioning and projection.
    """

    m: Dict[int, float] = field(default_factory=dict)

    def update(self, x: SparseExample):
        m = self.m
        for i, v in x.features:
            av = abs(v)
            if av > m.get(i, 0.0):
                m[i] = av

    def s_ii(self, i: int) -> float:
        return 1.0 / (self.m[i] * self.m[i])

    def copy(self) -> "EnclosingBox":
        return EnclosingBox(dict(self.m))

    @classmethod
    def from_stream(cls, stream) -> "EnclosingBox":
        box = cls()
        for ex in stream:
            box.update(ex)
        return box


@dataclass
class ComparatorBall:
    """The bounded-output comparator class {w : ||S^{-1/2} w||_q <= C}.

    Coordinates outside the box support require w_i = 0.
    """

    box: EnclosingBox
    C: float
    q: int = 1

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be strictly positive")
        if self.q not in (1, 2):
            raise ValueError("q must be 1 or 2")

    def norm(self, w: Mapping[int, float]) -> float:
        """||S^{-1/2} w||_q over the box support; infinite if w is nonzero
        off-support."""
        m = self.box.m
        if self.q == 1:
            total = 0.0
            for i, wi in w.items():
                if wi == 0.0:
                    continue
                if i not in m:
                    return math.inf
                total += abs(wi) * m[i]
            return total
        total = 0.0
        for i, wi in w.items():
            if wi == 0.0:
                continue
            if i not in m:
                return math.inf
            u = wi * m[i]
            total += u * u
        return math.sqrt(total)

    def contains(self, w: Mapping[int, float], tol: float = 1e-9) -> bool:
        return self.norm(w) <= self.C + tol


@dataclass
class DiagonalConditioner:
    """Running state for the transductive (fixed box) or streaming
    (running box) conditioner recipes. A_t is returned as a dict over the
    coordinates with nonzero gradient mass."""

    recipe: str                      # "transductive" | "streaming"
    C: float
    eta: float = SQRT2
    box: EnclosingBox = field(default_factory=EnclosingBox)
    sum_g2: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.recipe not in ("transductive", "streaming"):
            raise ValueError(f"unknown conditioner recipe {self.recipe!r}")

    def step(self, g: Mapping[int, float], x: SparseExample) -> Dict[int, float]:
        """Fold in the round-t gradient (and, when streaming, the input) and
        return the current diagonal A_t."""
        if self.recipe == "streaming":
            self.box.update(x)
        for i, gi in g.items():
            if gi != 0.0:
                self.sum_g2[i] = self.sum_g2.get(i, 0.0) + gi * gi
        inv_ceta = 1.0 / (self.C * self.eta)
        m = self.box.m
        return {
            i: inv_ceta * math.sqrt(s) * m[i]
            for i, s in self.sum_g2.items()
            if i in m
        }


def hindsight_conditioner(sum_g2: Mapping[int, float], box: EnclosingBox,
                          C: float) -> Dict[int, float]:
    """Minimax-optimal fixed diagonal for a completed gradient log:
    A*_ii = (1/C) sqrt(sum_t g_ti^2 / S_ii) = (1/C) sqrt(sum g^2) * m_i.

    Coordinates with zero gradient mass or never observed are excluded.
    """
    out = {}
    for i, s in sum_g2.items():
        if s > 0.0 and i in box.m:
            out[i] = math.sqrt(s / box.s_ii(i)) / C
    return out


def lemma2_bound(sum_g2: Mapping[int, float], box: EnclosingBox, C: float) -> float:
    """Regret bound at the hindsight conditioner:
    C * sum_i sqrt(S_ii * sum_t g_ti^2).

    Invariant under per-coordinate rescaling of the logged run.
    """
    total = 0.0
    for i, s in sum_g2.items():
        if s > 0.0 and i in box.m:
            total += math.sqrt(box.s_ii(i) * s)
    return C * total


def _project_weighted_l1(u: Dict[int, float], d: Dict[int, float], C: float) -> Dict[int, float]:
    """min sum d_i (v_i - u_i)^2 s.t. sum |v_i| <= C, by exact sort-based
    thresholding of the KKT conditions (soft threshold lambda/(2 d_i))."""
    if sum(abs(v) for v in u.values()) <= C:
        return dict(u)
    items = []
    for i, ui in u.items():
        a = abs(ui)
        theta = 1.0 / (2.0 * d[i])
        items.append((a / theta, i, a, theta))
    items.sort(reverse=True)
    cum_a = 0.0
    cum_theta = 0.0
    lam = 0.0
    n = len(items)
    for k, (b, i, a, theta) in enumerate(items):
        cum_a += a
        cum_theta += theta
        lam_k = (cum_a - C) / cum_theta
        next_b = items[k + 1][0] if k + 1 < n else -math.inf
        if lam_k >= next_b and lam_k <= b:
            lam = lam_k
            break
    else:
        lam = (cum_a - C) / cum_theta
    out = {}
    for i, ui in u.items():
        mag = abs(ui) - lam / (2.0 * d[i])
        out[i] = math.copysign(mag, ui) if mag > 0.0 else 0.0
    return out


def _project_weighted_l2(u: Dict[int, float], d: Dict[int, float], C: float) -> Dict[int, float]:
    """min sum d_i (v_i - u_i)^2 s.t. ||v||_2 <= C, via a monotone
    root-find on the Lagrange multiplier: v_i = d_i u_i / (d_i + lam)."""
    norm2 = math.sqrt(sum(v * v for v in u.values()))
    if norm2 <= C:
        return dict(u)

    keys = list(u)

    def constraint(lam):
        total = 0.0
        for i in keys:
            vi = d[i] * u[i] / (d[i] + lam)
            total += vi * vi
        return math.sqrt(total) - C

    hi = 1.0
    while constraint(hi) > 0.0:
        hi *= 2.0
        if hi > 1e30:
            break
    lam = brentq(constraint, 0.0, hi, xtol=1e-15, rtol=8.9e-16)
    return {i: d[i] * u[i] / (d[i] + lam) for i in keys}


def project(w: Mapping[int, float], A: Mapping[int, float], ball: ComparatorBall) -> Dict[int, float]:
    """Metric projection argmin_{||S^{-1/2} v||_q <= C} (v - w)^T A (v - w).

    Solved in the variables u = S^{-1/2} w (u_i = m_i w_i) where the metric
    becomes diag(A_ii S_ii) and the constraint a plain q-norm ball.
    Coordinates with A_ii = 0 or outside the box support pass through
    unchanged; already-feasible inputs are returned exactly.
    """
    m = ball.box.m
    active = {}
    passthrough = {}
    for i, wi in w.items():
        if A.get(i, 0.0) > 0.0 and i in m:
            active[i] = wi
        else:
            passthrough[i] = wi
    if not active:
        return dict(w)

    u = {i: active[i] * m[i] for i in active}
    d = {i: A[i] / (m[i] * m[i]) for i in active}
    if ball.q == 1:
        if sum(abs(v) for v in u.values()) <= ball.C:
            proj = u
        else:
            proj = _project_weighted_l1(u, d, ball.C)
    else:
        proj = _project_weighted_l2(u, d, ball.C)

    out = dict(passthrough)
    for i, ui in proj.items():
        out[i] = ui / m[i]
    return out
