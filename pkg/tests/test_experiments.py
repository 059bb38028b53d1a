import os
from dataclasses import replace

import numpy as np
import pytest

from equicalib.experiments import (SWISS_CLASSIFIER_CFG, VECTORFIELD_CFG,
                                   run_swissroll_sweep,
                                   run_vectorfield_experiment, spearman,
                                   sweep_averages)

TINY_SWISS = replace(SWISS_CLASSIFIER_CFG, epochs=8, layer_widths=[12, 12])
TINY_FIELD = replace(VECTORFIELD_CFG, epochs=8, layer_widths=[8, 8])


class TestSpearman:
    def test_perfect_monotone(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_perfect_reverse(self):
        assert spearman([1, 2, 3], [5, 4, 3]) == pytest.approx(-1.0)

    def test_ties_handled(self):
        value = spearman([1, 2, 3, 4], [1, 1, 2, 2])
        assert 0.8 <= value <= 1.0


class TestSwissSweep:
    def test_row_structure(self):
        rows = run_swissroll_sweep(ratios=[0.0, 1.0], seeds=[0], cfg=TINY_SWISS,
                                   n_per_arm=15)
        assert len(rows) == 4
        models = {r.model for r in rows}
        assert models == {"invariant", "unconstrained"}
        for r in rows:
            assert 0.0 <= r.acc <= 1.0
            assert 0.0 <= r.ece <= 1.0
            assert r.lb <= r.ub + 1e-12

    def test_bounds_match_ratio(self):
        rows = run_swissroll_sweep(ratios=[0.0], seeds=[0], cfg=TINY_SWISS,
                                   n_per_arm=15)
        # at ratio 0 every orbit conflicts: accuracy band collapses to 1/2
        assert rows[0].ub == pytest.approx(0.5, abs=1e-10)

    def test_deterministic(self):
        a = run_swissroll_sweep(ratios=[0.5], seeds=[1], cfg=TINY_SWISS,
                                n_per_arm=12)
        b = run_swissroll_sweep(ratios=[0.5], seeds=[1], cfg=TINY_SWISS,
                                n_per_arm=12)
        assert [r.as_dict() for r in a] == [r.as_dict() for r in b]

    def test_thread_count_does_not_change_results(self, monkeypatch):
        base = run_swissroll_sweep(ratios=[0.0, 1.0], seeds=[0], cfg=TINY_SWISS,
                                   n_per_arm=12)
        monkeypatch.setenv("EQUICALIB_THREADS", "4")
        threaded = run_swissroll_sweep(ratios=[0.0, 1.0], seeds=[0],
                                       cfg=TINY_SWISS, n_per_arm=12)
        assert [r.as_dict() for r in base] == [r.as_dict() for r in threaded]

    def test_sweep_averages_shape(self):
        rows = run_swissroll_sweep(ratios=[0.0, 1.0], seeds=[0, 1],
                                   cfg=TINY_SWISS, n_per_arm=12)
        avg = sweep_averages(rows, "invariant")
        assert set(avg) == {0.0, 1.0}
        assert set(avg[0.0]) == {"acc", "ece", "ub"}


class TestVectorFieldExperiment:
    def test_report_structure(self):
        report = run_vectorfield_experiment("spiral", seeds=[0], cfg=TINY_FIELD,
                                            n=64)
        assert len(report.rows) == 2
        # format contract: exactly 16 sectors per (seed, model)
        for model in ("unconstrained", "radial_equivariant"):
            sectors = [r["sector"] for r in report.angle_rows
                       if r["model"] == model]
            assert sectors == sorted(sectors)
            assert len(sectors) == 16

    def test_mean_metric(self):
        report = run_vectorfield_experiment("sinusoidal", seeds=[0, 1],
                                            cfg=TINY_FIELD, n=64)
        value = report.mean_metric("unconstrained", "mse")
        per_seed = [r.mse for r in report.rows if r.model == "unconstrained"]
        assert value == pytest.approx(float(np.mean(per_seed)))
