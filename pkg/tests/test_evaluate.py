import math
import os

import numpy as np
import pytest

from nol.core import SparseExample, get_loss
from nol.data import synth_figure1
from nol.evaluate import (
    ComparisonReport,
    SweepSpec,
    default_eta_grid,
    kl_confidence_interval,
    multiclass_progressive,
    plot_csv_rows,
    progressive_validation,
    significance,
    sweep,
)
from nol.learners import LearnerConfig


def ex(feats, y=1.0):
    return SparseExample(tuple(sorted(feats.items())), y)


SQ = get_loss("squared")
HINGE = get_loss("hinge")


class TestProgressiveValidation:
    def test_zero_one_sequence(self):
        # frozen learner predicts 0 forever; ties count as errors, so every
        # example is an error
        stream = [ex({0: 1.0}, 1.0), ex({0: 1.0}, -1.0)]
        res = progressive_validation(LearnerConfig("sgd", 0.0), HINGE, stream)
        assert res.eval_losses == [1.0, 1.0]

    def test_learning_reduces_errors(self):
        stream = [ex({0: 1.0}, 1.0) for _ in range(4)]
        res = progressive_validation(LearnerConfig("sgd", 0.5), HINGE, stream)
        # first prediction is 0 (tie -> error), afterwards positive
        assert res.eval_losses == [1.0, 0.0, 0.0, 0.0]
        assert res.average_eval_loss == 0.25

    def test_training_loss_is_progressive(self):
        stream = [ex({0: 1.0}), ex({0: 2.0})]
        res = progressive_validation(LearnerConfig("ng", 0.5), SQ, stream,
                                     task="regression", loss_scale=1.0)
        assert res.training_losses == [1.0, 0.25]
        assert res.average_training_loss == 0.625

    def test_regression_scaling(self):
        stream = [ex({0: 1.0}, 0.0), ex({0: 1.0}, 2.0)]
        res = progressive_validation(LearnerConfig("sgd", 0.0), SQ, stream,
                                     task="regression")
        # loss scale (2-0)^2 = 4; squared errors 0 and 4
        assert res.eval_losses == [0.0, 1.0]

    def test_empty_stream_rejected(self):
        with pytest.raises(ValueError):
            progressive_validation(LearnerConfig("sgd", 0.1), SQ, [])


class TestMulticlass:
    def test_three_class_learnable(self):
        rng = np.random.default_rng(8)
        stream = []
        for _ in range(300):
            c = int(rng.integers(0, 3))
            x = {c: 1.0, 3: float(rng.normal() * 0.1)}
            stream.append(ex(x, float(c)))
        res = multiclass_progressive(LearnerConfig("nag", 0.5), HINGE, stream)
        assert res.n_examples == 300
        # the disjoint indicator features make this easy; late errors vanish
        assert sum(res.eval_losses[100:]) == 0.0

    def test_single_class_trivial(self):
        stream = [ex({0: 1.0}, 2.0) for _ in range(5)]
        res = multiclass_progressive(LearnerConfig("sgd", 0.1), HINGE, stream)
        assert res.average_eval_loss == 0.0


class TestSweep:
    def small_spec(self, **kw):
        defaults = dict(kinds=["nag", "sgd"], loss="hinge",
                        eta_grid=[0.25, 0.5, 1.0])
        defaults.update(kw)
        return SweepSpec(**defaults)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            SweepSpec(kinds=["sgd"], loss="hinge", eta_grid=[])
        with pytest.raises(ValueError):
            SweepSpec(kinds=["sgd"], loss="hinge", eta_grid=[1.0, 0.5])

    def test_default_grid(self):
        grid = default_eta_grid()
        assert grid[0] == 2.0 ** -20 and grid[-1] == 64.0
        assert len(grid) == 27

    def test_cells_cover_product(self):
        stream = synth_figure1(1.0, 50, seed=2)
        rep = sweep(self.small_spec(), stream)
        assert [(c.kind, c.eta) for c in rep.cells] == [
            ("nag", 0.25), ("nag", 0.5), ("nag", 1.0),
            ("sgd", 0.25), ("sgd", 0.5), ("sgd", 1.0)]

    def test_best_is_argmin(self):
        stream = synth_figure1(1.0, 200, seed=2)
        rep = sweep(self.small_spec(), stream)
        for kind in ("nag", "sgd"):
            cells = [c for c in rep.cells if c.kind == kind]
            lo = min(c.eval_loss for c in cells)
            assert rep.best[kind][1] == lo
            assert rep.best[kind][0] in [c.eta for c in cells if c.eval_loss == lo]

    def test_deterministic_and_thread_invariant(self):
        stream = synth_figure1(1.0, 100, seed=5)
        r1 = sweep(self.small_spec(), stream)
        old = os.environ.get("NOL_THREADS")
        os.environ["NOL_THREADS"] = "4"
        try:
            r2 = sweep(self.small_spec(), stream)
        finally:
            if old is None:
                del os.environ["NOL_THREADS"]
            else:
                os.environ["NOL_THREADS"] = old
        assert [(c.kind, c.eta, c.eval_loss) for c in r1.cells] == \
               [(c.kind, c.eta, c.eval_loss) for c in r2.cells]

    def test_failed_cell_marked_not_fatal(self):
        # enormous constant rate diverges sgd on squared loss
        stream = [ex({0: 10.0}, 1.0 + (k % 2)) for k in range(200)]
        spec = SweepSpec(kinds=["sgd"], loss="squared", eta_grid=[1e-3, 1e150],
                         task="regression")
        rep = sweep(spec, stream)
        ok, bad = rep.cells
        assert ok.error is None and ok.eval_loss is not None
        assert bad.error is not None and bad.eval_loss is None
        assert rep.best["sgd"][0] == 1e-3

    def test_plot_csv(self):
        stream = synth_figure1(1.0, 30, seed=1)
        rep = sweep(self.small_spec(), stream)
        rows = plot_csv_rows(rep)
        assert rows[0] == "learner,eta,loss"
        assert len(rows) == 1 + len(rep.cells)
        kind, eta, loss = rows[1].split(",")
        assert kind == "nag" and float(eta) == 0.25
        assert float(loss) == rep.cells[0].eval_loss


class TestKLInterval:
    def test_contains_mean(self):
        lo, hi = kl_confidence_interval(0.3, 100, 0.025)
        assert lo < 0.3 < hi

    def test_shrinks_with_n(self):
        lo1, hi1 = kl_confidence_interval(0.3, 100, 0.025)
        lo2, hi2 = kl_confidence_interval(0.3, 10000, 0.025)
        assert hi2 - lo2 < hi1 - lo1

    def test_degenerate_means(self):
        lo, hi = kl_confidence_interval(0.0, 1000, 0.025)
        assert lo == 0.0 and 0.0 < hi < 0.01
        lo, hi = kl_confidence_interval(1.0, 1000, 0.025)
        assert hi == 1.0 and 0.99 < lo < 1.0

    def test_kl_width_beats_hoeffding_near_edges(self):
        # near-zero means get much tighter intervals than sqrt(log/2n)
        n, alpha = 10000, 0.025
        lo, hi = kl_confidence_interval(0.01, n, alpha)
        hoeffding = math.sqrt(math.log(1 / alpha) / (2 * n))
        assert hi - 0.01 < hoeffding

    def test_bad_mean_rejected(self):
        with pytest.raises(ValueError):
            kl_confidence_interval(1.5, 10, 0.025)


class TestSignificance:
    def test_identical_sequences_not_significant(self):
        seq = [0.0, 1.0] * 50
        v = significance(seq, seq)
        assert not v.significant
        assert v.interval_a == v.interval_b

    def test_opposite_constant_sequences_significant(self):
        v = significance([0.0] * 1000, [1.0] * 1000)
        assert v.significant
        assert v.mean_a == 0.0 and v.mean_b == 1.0

    def test_close_means_large_n_significant(self):
        # means 0.0980 vs 0.1090 at n = 45212 separate at the default budget
        n = 45212
        a = [1.0] * 4431 + [0.0] * (n - 4431)
        b = [1.0] * 4928 + [0.0] * (n - 4928)
        assert abs(sum(a) / n - 0.0980) < 1e-4
        assert abs(sum(b) / n - 0.1090) < 1e-4
        v = significance(a, b)
        assert v.significant
        assert v.interval_a[1] < v.interval_b[0]

    def test_same_gap_small_n_not_significant(self):
        n = 1000
        a = [1.0] * 98 + [0.0] * (n - 98)
        b = [1.0] * 109 + [0.0] * (n - 109)
        assert not significance(a, b).significant

    def test_symmetry(self):
        a = [0.0] * 900 + [1.0] * 100
        b = [0.0] * 700 + [1.0] * 300
        assert significance(a, b).significant == significance(b, a).significant

    def test_budget_monotonicity(self):
        # a looser failure budget can only make the verdict easier
        n = 2000
        a = [1.0] * 200 + [0.0] * (n - 200)
        b = [1.0] * 260 + [0.0] * (n - 260)
        strict = significance(a, b, failure_probability=0.001)
        loose = significance(a, b, failure_probability=0.5)
        if strict.significant:
            assert loose.significant

    def test_input_validation(self):
        with pytest.raises(ValueError):
            significance([0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            significance([], [])
        with pytest.raises(ValueError):
            significance([2.0], [0.5])
