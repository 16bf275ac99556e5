import math

import numpy as np
import pytest

from cfdetect import evalharness as eh
from cfdetect.evalharness import ExperimentSpec, RocCurve
from cfdetect.simkit import Perturbation, SystemConfig

TINY = SystemConfig(K=2, M=2, N=12, L=8, epsilon=0.3)


def tiny_spec(**kw):
    base = dict(system=TINY, trials=4, max_iters=15, threshold_count=None)
    base.update(kw)
    return ExperimentSpec(**base)


def test_trials_are_reproducible_and_independent_of_order():
    spec = tiny_spec(algorithm="ghvi")
    a = eh.run_trials(spec)
    b = eh.run_trials(spec)
    for ra, rb in zip(a.results, b.results):
        np.testing.assert_array_equal(ra.scores, rb.scores)
    # running trial 3 alone reproduces it
    alone = eh._run_one((spec, 3))
    np.testing.assert_array_equal(alone.scores, a.results[3].scores)


def test_parallel_workers_give_identical_results():
    spec = tiny_spec(algorithm="map", trials=3)
    serial = eh.run_trials(spec)
    parallel = eh.run_trials(spec.replace(workers=2))
    for ra, rb in zip(serial.results, parallel.results):
        assert ra.index == rb.index
        np.testing.assert_array_equal(ra.scores, rb.scores)


def test_knowledge_perturbation_leaves_signals_alone():
    a = eh.generate_trial(TINY, Perturbation(), 7, 2)
    b = eh.generate_trial(TINY, Perturbation(pathloss_error_db=3.0), 7, 2)
    np.testing.assert_array_equal(a.signals.y, b.signals.y)
    assert not np.array_equal(a.knowledge.effective_beta, b.knowledge.effective_beta)


def test_epsilon_range_draws_per_trial_rates():
    pert = Perturbation(epsilon_range=(0.0, 0.0))
    trial = eh.generate_trial(TINY, pert, 0, 0)
    assert trial.channels.activity.sum() == 0


def test_rates_nan_without_actives():
    pmd, pfa, n_act, n_inact = eh.detection_rates([0.1, 0.4], [False, False], 0.2)
    assert math.isnan(pmd) and pfa == 0.5 and n_act == 0 and n_inact == 2


def test_roc_end_points_and_monotonicity():
    rng = np.random.default_rng(0)
    truth = rng.random(500) < 0.2
    scores = rng.standard_normal(500) + 1.5 * truth
    for count in (None, 51):
        roc = eh.roc_curve(scores, truth, count)
        assert roc.pmd[0] == 0.0 and roc.pfa[0] == 1.0
        assert roc.pmd[-1] == 1.0 and roc.pfa[-1] == 0.0
        assert np.all(np.diff(roc.thresholds) > 0)
        assert np.all(np.diff(roc.pmd) >= 0) and np.all(np.diff(roc.pfa) <= 0)


def test_roc_agrees_with_pointwise_rates():
    rng = np.random.default_rng(1)
    truth = rng.random(200) < 0.3
    scores = rng.random(200) + truth
    roc = eh.roc_curve(scores, truth, None)
    for rho, pmd, pfa in roc.points[::17]:
        ref = eh.detection_rates(scores, truth, rho)
        assert (pmd, pfa) == pytest.approx(ref[:2], abs=1e-15)


def test_separated_scores_have_zero_equal_error():
    roc = eh.roc_curve([0.1, 0.2, 0.3, 2.0, 3.0], [0, 0, 0, 1, 1], None)
    rho, rate = roc.equal_error
    assert rate == 0.0
    assert 0.3 <= rho < 2.0


def test_equal_error_interpolates_between_brackets():
    roc = RocCurve(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.2, 0.6]), np.array([1.0, 0.4, 0.2]))
    rho, rate = roc.equal_error
    # gap goes -0.2 -> 0.4, crossing a third of the way from threshold 1 to 2
    assert rho == pytest.approx(1 + 1 / 3)
    assert rate == pytest.approx(0.2 + 0.4 / 3)


def test_uninformative_scores_sit_near_one_half():
    rng = np.random.default_rng(2)
    truth = rng.random(20000) < 0.5
    roc = eh.roc_curve(rng.random(20000), truth, 201)
    assert roc.equal_error[1] == pytest.approx(0.5, abs=0.02)


def test_roc_rejects_degenerate_truth():
    with pytest.raises(ValueError):
        eh.roc_curve([0.1, 0.2], [True, True])
    with pytest.raises(ValueError):
        eh.roc_curve([0.1, np.nan], [True, False])


def test_confidence_halfwidth_shrinks_as_inverse_root():
    w1 = eh.confidence_halfwidth(0.1, 100)
    w4 = eh.confidence_halfwidth(0.1, 400)
    assert w1 / w4 == pytest.approx(2.0)
    assert w1 == pytest.approx(1.959963984540054 * math.sqrt(0.09 / 100))
    assert math.isnan(eh.confidence_halfwidth(0.1, 0))


def test_roc_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    truth = rng.random(300) < 0.2
    roc = eh.roc_curve(rng.standard_normal(300) * 1e-3 + truth * 1e-3, truth, 37)
    path = tmp_path / "roc.csv"
    eh.write_roc_csv(roc, path)
    back = eh.read_roc_csv(path)
    for a, b in ((roc.thresholds, back.thresholds), (roc.pmd, back.pmd), (roc.pfa, back.pfa)):
        np.testing.assert_array_equal(a, b)
    assert path.read_text().splitlines()[0] == "threshold,pmd,pfa"


def test_summary_csv_round_trip(tmp_path):
    rows = [eh.SweepRow(10, 0.125, 0.01), eh.SweepRow(0.5, 0.2, 0.03)]
    path = tmp_path / "s.csv"
    eh.write_summary_csv(rows, path)
    back = eh.read_summary_csv(path)
    assert [r.param for r in back] == ["10", "0.5"]
    assert [r.equal_error for r in back] == [0.125, 0.2]
    assert path.read_text().splitlines()[0] == "param,equal_error,ci95"


def test_bad_csv_header_rejected(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        eh.read_roc_csv(path)
    with pytest.raises(ValueError):
        eh.read_summary_csv(path)


def test_sweep_specs_routes_fields():
    base = tiny_spec()
    specs = eh.sweep_specs(base, "L", [4, 6])
    assert [s.system.L for _, s in specs] == [4, 6]
    specs = eh.sweep_specs(base, "pathloss_error_db", [0.0, 3.0])
    assert specs[1][1].perturbation.pathloss_error_db == 3.0
    with pytest.raises(ValueError):
        eh.sweep_specs(base, "colour", [1])


def test_sweep_rows_follow_parameter_order_including_duplicates():
    rows = eh.equal_error_sweep(eh.sweep_specs(tiny_spec(algorithm="cov", trials=3), "L", [8, 6, 8]))
    assert [r.param for r in rows] == [8, 6, 8]
    assert rows[0].equal_error == rows[2].equal_error
    assert all(0 <= r.equal_error <= 1 for r in rows)


def test_spec_solver_options_respect_overrides():
    spec = tiny_spec(algorithm="cov", rel_tol=1e-3, max_iters=7)
    opts = spec.solver_options()
    assert opts.rel_tol == 1e-3 and opts.max_sweeps == 7
    opts = tiny_spec(algorithm="map", rel_tol=None, max_iters=None).solver_options()
    assert opts.rel_tol == 1e-4 and opts.max_outer_iters == 200


@pytest.mark.parametrize("bad", [dict(algorithm="lasso"), dict(trials=0), dict(threshold_count=1),
                                 dict(workers=0), dict(rel_tol=0.0), dict(max_iters=0)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        tiny_spec(**bad)


def test_failed_trials_are_reported_not_raised(monkeypatch):
    from cfdetect.model import SolverDivergence

    def boom(*args, **kwargs):
        raise SolverDivergence("synthetic failure")
    monkeypatch.setattr(eh, "run_detector", boom)
    batch = eh.run_trials(tiny_spec(trials=2))
    assert len(batch.failures) == 2 and not batch.completed
    scores, truth = batch.pooled()
    assert scores.size == 0 and truth.size == 0


def test_run_detector_requires_knowledge_for_cov():
    trial = eh.generate_trial(TINY, Perturbation(), 0, 0)
    with pytest.raises(ValueError):
        eh.run_detector("cov", trial.signals, trial.pilots)
    with pytest.raises(ValueError):
        eh.run_detector("other", trial.signals, trial.pilots)
