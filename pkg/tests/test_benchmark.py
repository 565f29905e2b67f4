import csv
import json
import math

import numpy as np
import pytest

from sparsekern.benchmark import (
    CSV_COLUMNS,
    PSE_GRID,
    ExperimentConfig,
    MethodSpec,
    TrialRecord,
    best_gamma_rows,
    df_curve_from_scans,
    epic_family,
    gamma_curve,
    mse_metric,
    pse_metric,
    run_monte_carlo,
    sample_dataset,
    summarize,
    write_records_csv,
    write_summary_json,
)
from sparsekern.exceptions import DomainError
from sparsekern.kernels import KernelBank, build_design
from sparsekern.selection import EPIC, GCV, PIC, DfKind
from sparsekern.signals import SignalKind, generate_signal, raw_signal


class TestSignals:
    def test_bumps_peak_is_three(self):
        grid = np.linspace(0, 1, 100_001)
        assert abs(generate_signal("bumps", grid).max() - 3.0) < 1e-4
        assert generate_signal("bumps", 0.6) == pytest.approx(3.0, rel=1e-15)
        assert generate_signal("bumps", grid).max() <= 3.0 + 1e-12

    def test_blocks_first_step(self):
        for x in (0.151, 0.17, 0.199):
            assert generate_signal(SignalKind.BLOCKS, x) == pytest.approx(1.0)
        assert generate_signal("blocks", 0.1) == 0.0

    def test_raw_doppler_value(self):
        expected = math.sqrt(0.85 * 0.15) * math.sin(2 * math.pi * 1.05 / 1.0)
        np.testing.assert_allclose(raw_signal("doppler", 0.85), expected, rtol=1e-14)
        # the quoted 0.11033 is off by one in the last digit; the formula gives 0.110341
        assert raw_signal("doppler", 0.85) == pytest.approx(0.11033, abs=2e-5)

    @pytest.mark.parametrize("kind", ["doppler", "heavisine"])
    def test_normalized_range(self, kind):
        g = generate_signal(kind, np.linspace(0, 1, 2_000_001))
        assert g.max() <= 1 + 1e-6 and g.min() >= -1 - 1e-6
        assert g.max() > 0.999 and g.min() < -0.999

    @pytest.mark.parametrize("kind", list(SignalKind))
    def test_pure(self, kind):
        x = np.linspace(0, 1, 101)
        np.testing.assert_array_equal(generate_signal(kind, x), generate_signal(kind, x.copy()))


def _config(sigma=0.3, n=30, trials=2, method=None, seed=7):
    method = method or MethodSpec("skrvm", width=0.05)
    return ExperimentConfig("bumps", n, sigma, trials, method, seed=seed)


class TestSampling:
    def test_noiseless(self):
        x, y, g = sample_dataset(_config(sigma=0.0), 0)
        np.testing.assert_array_equal(y, g)
        np.testing.assert_array_equal(g, generate_signal("bumps", x))
        assert x.min() >= 0 and x.max() <= 1

    def test_noise_variance(self):
        x, y, g = sample_dataset(_config(sigma=0.3, n=1_000_000), 3)
        assert abs(np.var(y - g) / 0.09 - 1) < 0.01

    def test_deterministic_and_distinct(self):
        cfg = _config()
        a = sample_dataset(cfg, 4)
        b = sample_dataset(cfg, 4)
        c = sample_dataset(cfg, 5)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
        assert not np.array_equal(a[0], c[0])

    def test_bad_config(self):
        with pytest.raises(DomainError):
            _config(sigma=-1)
        with pytest.raises(DomainError):
            _config(trials=0)
        with pytest.raises(DomainError):
            MethodSpec("skrvm")
        with pytest.raises(DomainError):
            MethodSpec("mkvrvm-invgamma")
        with pytest.raises(DomainError):
            MethodSpec("lasso")


class TestMetrics:
    def test_mse_hand_case(self):
        assert mse_metric(np.array([1.1, 0.9]), np.array([1.0, 1.0])) == pytest.approx(0.02, rel=1e-12)
        assert mse_metric(np.ones(5), np.ones(5)) == 0.0

    def test_mse_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=40), rng.normal(size=40)
        oracle = sum((u - v) ** 2 for u, v in zip(a, b)) / 39
        np.testing.assert_allclose(mse_metric(a, b), oracle, rtol=1e-14)

    def test_pse_grid(self):
        assert len(PSE_GRID) == 1000
        np.testing.assert_allclose(PSE_GRID, np.arange(1000) / 999, atol=1e-16)

    def test_pse_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=15)
        design = build_design(x, KernelBank.single(0.1))
        w = rng.normal(size=design.n_columns)
        z = np.array([w[0] + sum(w[1 + j] * math.exp(-(t - c) ** 2 / (2 * 0.1 ** 2)) for j, c in enumerate(x))
                      for t in PSE_GRID])
        g = generate_signal("doppler", PSE_GRID)
        oracle = float(np.sum((z - g) ** 2) / 999)
        np.testing.assert_allclose(pse_metric(w, design, "doppler"), oracle, rtol=1e-12)

    def test_pse_of_zero_weights_is_signal_energy(self):
        design = build_design(np.linspace(0, 1, 5), KernelBank.single(0.2))
        expected = np.sum(generate_signal("blocks", PSE_GRID) ** 2) / 999
        assert pse_metric(np.zeros(design.n_columns), design, "blocks") == pytest.approx(expected, rel=1e-14)


def _record(trial, pse, crit="c", failed=False, b=None, rvs=3, gamma=None):
    return TrialRecord(trial=trial, seed=0, method="m", criterion=crit, signal="bumps", N=10, sigma=0.1,
                       gamma=gamma, bias_kind=None, df_kind=None, selected_b=b, mse=pse / 2, pse=pse,
                       rvs=rvs, sparsity_pct=10.0 * rvs, tr_h=2.0, converged=True, failed=failed)


class TestSummary:
    def test_single_trial(self):
        rows = summarize([_record(0, 0.25, b=2.0)])
        assert len(rows) == 1
        row = rows[0]
        assert row["pse_mean"] == 0.25 and row["pse_std"] == 0.0
        assert row["b_mean"] == 2.0 and row["n_trials"] == 1 and row["n_failed"] == 0

    def test_failed_excluded_and_counted(self):
        recs = [_record(0, 0.2), _record(1, 0.4), _record(2, math.nan, failed=True)]
        row = summarize(recs)[0]
        assert row["n_failed"] == 1 and row["n_trials"] == 2
        assert row["pse_mean"] == pytest.approx(0.3)
        assert row["pse_std"] == pytest.approx(np.std([0.2, 0.4], ddof=1))

    def test_best_gamma_rows(self):
        rows = [dict(method="m", criterion="EPIC_0.3[gic,trh]", bias="gic", df="trh", pse_mean=0.2),
                dict(method="m", criterion="EPIC_0.5[gic,trh]", bias="gic", df="trh", pse_mean=0.1),
                dict(method="m", criterion="GCV", bias=None, df=None, pse_mean=0.3)]
        best = best_gamma_rows(rows)
        assert [r["criterion"] for r in best] == ["EPIC_0.5[gic,trh]", "GCV"]

    def test_epic_family(self):
        fam = epic_family((0.0, 0.5, 1.0), dfs=tuple(DfKind))
        assert len(fam) == 6 and all(isinstance(c, EPIC) for c in fam)


class TestMonteCarlo:
    def test_single_kernel_run(self):
        res = run_monte_carlo(_config(trials=2))
        assert [r.trial for r in res.records] == [0, 1]
        for r in res.records:
            assert r.method == "skrvm h=0.05" and not r.failed
            assert r.sparsity_pct == pytest.approx(100 * r.rvs / 31)
            assert r.selected_b is None
        row = res.summary[0]
        assert row["n_trials"] == 2 and np.isfinite(row["pse_mean"])

    def test_gamma_hyperprior_run(self):
        res = run_monte_carlo(_config(trials=1, method=MethodSpec("mkvrvm-gamma")))
        (r,) = res.records
        assert r.sparsity_pct == pytest.approx(100 * r.rvs / (1 + 30 * 10))
        row = res.summary[0]
        assert row["pse_std"] == 0.0 and row["pse_mean"] == r.pse

    def test_invgamma_criteria_share_scan(self):
        crits = (EPIC(0.5), EPIC(1.0), PIC(), GCV())
        method = MethodSpec("mkvrvm-invgamma", b_grid=(0.1, 1.0, 5.0), criteria=crits)
        res = run_monte_carlo(_config(trials=2, method=method), keep_scans=True)
        assert len(res.records) == 8
        assert sorted(res.scans) == [0, 1]
        for r in res.records:
            assert r.selected_b in (0.1, 1.0, 5.0)
            scan = {s.b: s for s in res.scans[r.trial]}
            assert r.pse == scan[r.selected_b].extras["pse"]
            assert r.rvs == scan[r.selected_b].rvs
        curve = df_curve_from_scans(res.scans)
        assert [row["b"] for row in curve] == [0.1, 1.0, 5.0]
        assert all(row["n"] == 2 for row in curve)
        gc = gamma_curve(res.records)
        assert [row["gamma"] for row in gc] == [0.0, 0.5, 1.0]

    def test_reproducible_across_threads(self):
        method = MethodSpec("mkvrvm-invgamma", b_grid=(0.5, 3.0), criteria=(EPIC(0.5),))
        serial = run_monte_carlo(_config(trials=2, method=method))
        cfg = ExperimentConfig("bumps", 30, 0.3, 2, method, seed=7, n_jobs=2)
        parallel = run_monte_carlo(cfg)
        assert serial.records == parallel.records


class TestOutput:
    def test_csv_and_json(self, tmp_path):
        res = run_monte_carlo(_config(trials=2))
        path = tmp_path / "out" / "trials.csv"
        write_records_csv(path, res.records)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == CSV_COLUMNS
        for col in ("trial", "seed", "method", "signal", "N", "sigma", "gamma", "bias_kind", "df_kind",
                    "selected_b", "mse", "pse", "rvs", "sparsity_pct", "tr_h", "converged"):
            assert col in CSV_COLUMNS
        assert float(rows[1]["pse"]) == res.records[1].pse
        jpath = tmp_path / "summary.json"
        write_summary_json(jpath, res)
        doc = json.loads(jpath.read_text())
        assert doc["trials"] == 2 and doc["rows"][0]["n_trials"] == 2
        # byte-identical on rerun
        first = path.read_bytes()
        write_records_csv(path, run_monte_carlo(_config(trials=2)).records)
        assert path.read_bytes() == first
        assert not [p for p in path.parent.iterdir() if p.name.startswith(".tmp")]
