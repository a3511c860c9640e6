import json

import numpy as np
import pytest

from kalsmooth import experiments as E
from kalsmooth import linear
from kalsmooth.errors import AllMeasurementsRemoved, InvalidParameter, ShapeMismatch
from kalsmooth.model import vanderpol_model
from kalsmooth.robust import smooth_l1_laplace


def test_zero_noise_simulation_is_deterministic_trajectory():
    mdl = vanderpol_model(N=30, dt=0.1)
    x, z = E.simulate(mdl, seed=0, process_cov=0.0, meas_cov=0.0)
    prev = mdl.x0
    for k in range(30):
        np.testing.assert_allclose(x[k], mdl.g(k, prev), atol=1e-15)
        prev = x[k]
    np.testing.assert_allclose([zk[0] for zk in z], x[:, 0], atol=0)


def test_process_noise_variance():
    mdl = vanderpol_model(N=10001, dt=1e-3)
    x, _ = E.simulate(mdl, seed=1, process_cov=0.01, meas_cov=0.0)
    w = np.array([x[k] - mdl.g(k, x[k - 1]) for k in range(1, mdl.N)])
    assert np.var(w[:, 0]) == pytest.approx(0.01, rel=0.1)
    assert np.var(w[:, 1]) == pytest.approx(0.01, rel=0.1)


def test_degenerate_mixture_is_outlier_distribution():
    spec = E.NoiseMixtureSpec(1.0, 0.25, 9.0)
    v = spec.sample(E.stream(0), 20000)
    assert np.var(v) == pytest.approx(9.0, rel=0.05)
    assert spec.variance == 9.0


def test_mixture_validation():
    with pytest.raises(InvalidParameter):
        E.NoiseMixtureSpec(1.5, 1.0, 2.0)
    with pytest.raises(InvalidParameter):
        E.NoiseMixtureSpec(0.1, 1.0)
    with pytest.raises(InvalidParameter):
        E.NoiseMixtureSpec(0.0, -1.0)
    assert E.NoiseMixtureSpec(0.0, 0.25).variance == 0.25


def test_streams_are_reproducible_and_distinct():
    a = E.stream(3, 1, 2, E.ROLE_MEASUREMENT).standard_normal(5)
    np.testing.assert_array_equal(a, E.stream(3, 1, 2, E.ROLE_MEASUREMENT).standard_normal(5))
    assert not np.allclose(a, E.stream(3, 1, 2, E.ROLE_PROCESS).standard_normal(5))
    assert not np.allclose(a, E.stream(3, 2, 2, E.ROLE_MEASUREMENT).standard_normal(5))


def test_mixture_draw_count_fixed_across_cells():
    # same replication and cell index: the nominal part of the noise is shared
    mdl, truth = E.robust_linear_scenario(N=50)
    _, z0 = E.simulate(mdl, 0, noise=E.NoiseMixtureSpec(0.0, 0.25), truth=truth)
    _, z1 = E.simulate(mdl, 0, noise=E.NoiseMixtureSpec(0.1, 0.25, 100.0), truth=truth)
    same = np.isclose(np.concatenate(z0), np.concatenate(z1))
    assert 0.75 < same.mean() < 1.0


def test_mse():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 2))
    assert E.mse(x, x) == 0.0
    shifted = x.copy()
    shifted[:, 1] += 0.3
    assert E.mse(shifted, x) == pytest.approx(0.09)
    y = rng.standard_normal((20, 2))
    total = 0.0
    for k in range(20):
        total += (x[k, 0] - y[k, 0]) ** 2 + (x[k, 1] - y[k, 1]) ** 2
    assert E.mse(y, x) == pytest.approx(total / 20)
    assert E.mse(np.ones(4), np.zeros(4)) == 1.0
    with pytest.raises(ShapeMismatch):
        E.mse(x, x[:5])


def test_summarize_matches_reference_percentiles():
    v = [5.0, 1.0, 3.0, 2.0, 4.0]
    med, lo, hi = E.summarize(v)
    assert med == 3.0
    assert lo == pytest.approx(1.1)
    assert hi == pytest.approx(4.9)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(101)
    med, lo, hi = E.summarize(v)
    s = np.sort(v)
    assert med == s[50]
    # 2.5th percentile by linear interpolation between order statistics 2 and 3
    assert lo == pytest.approx(s[2] + 0.5 * (s[3] - s[2]))
    assert lo <= med <= hi


def test_report_rows_and_files(tmp_path):
    report = E.MSEReport(methods=("A", "B"))
    cell = E.NoiseMixtureSpec(0.1, 0.25, 4.0)
    for v in (0.1, 0.3, 0.2):
        report.add(cell, "A", v)
        report.add(cell, "B", 2 * v)
    assert report.median(cell, "B") == pytest.approx(0.4)
    assert report.find(0.1, 4.0) is cell
    with pytest.raises(KeyError):
        report.find(0.2, 4.0)
    report.meta = {"seed": 0}
    paths = E.write_report(report, str(tmp_path), "demo")
    lines = open(paths["replications"], encoding="utf-8").read().splitlines()
    assert lines[0] == "cell_p,cell_phi,method,replication,mse"
    assert lines[1] == "0.1,4.0,A,0,0.1"
    summary = open(paths["summary"], encoding="utf-8").read().splitlines()
    assert summary[0] == "cell_p,cell_phi,method,median,lo95,hi95"
    assert json.load(open(paths["meta"], encoding="utf-8")) == {"seed": 0}
    assert "0.1" in report.format_table()


def test_table_output_is_byte_identical(tmp_path):
    cells = E.LINEAR_CELLS[:2]
    for name in ("a", "b"):
        report = E.run_robust_linear_table(replications=3, seed=5, cells=cells, N=40)
        E.write_report(report, str(tmp_path / name), "t")
    for suffix in ("t.csv", "t_summary.csv", "t_meta.json"):
        assert (tmp_path / "a" / suffix).read_bytes() == (tmp_path / "b" / suffix).read_bytes()


def test_methods_see_identical_data():
    # a paired comparison: rerunning one method alone reproduces its column
    cells = E.LINEAR_CELLS[2:3]
    both = E.run_robust_linear_table(replications=3, seed=2, cells=cells, methods=("IGS", "ILS"), N=40)
    one = E.run_robust_linear_table(replications=3, seed=2, cells=cells, methods=("ILS",), N=40)
    assert both.cells[cells[0]]["ILS"] == one.cells[cells[0]]["ILS"]


def test_experiment_spec_metadata():
    spec = E.ExperimentSpec("robust-linear", {"N": 10}, E.LINEAR_CELLS[:1], ("IGS",), 5, 7)
    meta = spec.metadata(scale=0.5)
    assert meta["rng"] == E.RNG_NAME
    assert meta["seed"] == 7 and meta["replications"] == 5 and meta["scale"] == 0.5
    with pytest.raises(InvalidParameter):
        E.ExperimentSpec("x", replications=0)


def test_baseline_removes_single_gross_outlier():
    mdl, truth = E.robust_linear_scenario(N=60)
    _, z = E.simulate(mdl, 0, noise=E.NoiseMixtureSpec(0.0, 0.25), truth=truth)
    clean = E.outlier_removal_baseline(mdl.with_measurements(z))
    z = list(z)
    z[30] = z[30] + 100 * 0.5
    sol = E.outlier_removal_baseline(mdl.with_measurements(z))
    assert not sol.info["keep"][30][0]
    assert sol.info["removed"] >= 1
    # the refit ignores the outlier: it matches the fit with that point masked out
    keep = [np.ones(1, dtype=bool)] * 60
    keep[30] = np.zeros(1, dtype=bool)
    masked = linear.smooth(mdl.with_measurements(z).mask(keep))
    if sol.info["removed"] == 1:
        np.testing.assert_allclose(sol.x, masked.x, atol=1e-12)
    assert E.mse(sol.x, truth) < 2 * E.mse(clean.x, truth)


def test_baseline_on_clean_data_removes_few_points():
    mdl, truth = E.robust_linear_scenario(N=400)
    _, z = E.simulate(mdl, 1, noise=E.NoiseMixtureSpec(0.0, 0.25), truth=truth)
    mdl = mdl.with_measurements(z)
    sol = E.outlier_removal_baseline(mdl)
    assert sol.info["removed"] <= 8
    assert np.max(np.abs(sol.x - linear.smooth(mdl).x)) < 0.2


def test_baseline_errors():
    mdl, truth = E.robust_linear_scenario(N=5)
    with pytest.raises(AllMeasurementsRemoved):
        E.outlier_removal_baseline(mdl.with_measurements([np.array([v]) for v in (1e6, -1e6, 1e6, -1e6, 1e6)]),
                                   threshold=1e-12)
    with pytest.raises(InvalidParameter):
        E.outlier_removal_baseline(vanderpol_model(N=10, dt=0.1))


def test_baseline_worse_than_l1_under_heavy_contamination():
    base, truth = E.robust_linear_scenario()
    cell = E.NoiseMixtureSpec(0.1, 0.25, 100.0)
    orb, ils = [], []
    for rep in range(10):
        _, z = E.simulate(base, 0, noise=cell, replication=rep, truth=truth)
        mdl = base.with_measurements(z)
        orb.append(E.mse(E.outlier_removal_baseline(mdl).x, truth))
        ils.append(E.mse(smooth_l1_laplace(mdl)[0].x, truth))
    assert np.median(orb) >= np.median(ils)


def test_box_constraint_encoding():
    cs = E.box_constraints(4, [-1, -2, -3, -4], 1.0)
    np.testing.assert_array_equal(cs.b[2], [1.0, 3.0])
    with pytest.raises(InvalidParameter):
        E.box_constraints(2, 1.0, 0.0)


def test_vapnik_zero_width_support_vectors_are_nonzero_residuals():
    res = E.run_vapnik_cv(samples=80, n_lam=2, n_eps=1, eps_range=(0.0, 0.0), seed=1)
    assert res.eps == 0.0
    resid = res.z[res.train] - res.fit[res.train]
    assert res.support_vectors == int(np.sum(np.abs(resid) > -1e-6))
    assert res.support_vectors == res.n_train


def test_vapnik_cv_shapes_and_validation():
    res = E.run_vapnik_cv(samples=60, n_lam=2, n_eps=3, seed=2)
    assert res.scores.shape == (2, 3) and res.gaussian_scores.shape == (2,)
    assert res.n_train == 39
    assert res.validation_mse == pytest.approx(np.min(res.scores))
    assert 0.0 <= res.support_fraction <= 1.0
    with pytest.raises(InvalidParameter):
        E.run_vapnik_cv(samples=3)
    with pytest.raises(InvalidParameter):
        E.run_vapnik_cv(samples=20, train_frac=1.0)


def test_bench_returns_timings():
    out = E.bench_scaling(sizes=(50, 100), repeats=2)
    assert set(out) == {50, 100} and all(v > 0 for v in out.values())

