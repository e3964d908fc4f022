import csv
import json

import numpy as np
import pytest

from qcbound.experiments import (ROW_SCHEMA, SUITES, ConfigError, ExperimentReport, PruningConfig,
                                 QuantisationConfig, SimilarityConfig, WorstCaseConfig, experiment_pruning,
                                 experiment_quantisation, experiment_similarity, experiment_worst_case_vs_delta,
                                 run_suite, strip_timing)


@pytest.fixture(scope="module")
def similarity():
    return experiment_similarity(SimilarityConfig(seeds=[0, 1, 2], layers=[1], n_samples=300))


class TestConfig:
    def test_empty_seeds(self):
        with pytest.raises(ConfigError):
            SimilarityConfig(seeds=[]).validate()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            SimilarityConfig.from_dict({"seedz": [1]})

    def test_unknown_suite(self):
        with pytest.raises(ConfigError):
            run_suite("bogus", {})

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            SimilarityConfig(weights=[0, 0, 0, 0]).validate()

    def test_round_trip(self):
        cfg = WorstCaseConfig(seeds=[3, 4], fraction_bits=[1, 2])
        assert WorstCaseConfig.from_dict(cfg.to_dict()) == cfg


class TestSimilarity:
    def test_rows_and_schema(self, similarity):
        assert len(similarity.rows) == 3
        assert all(tuple(r) == ROW_SCHEMA["similarity"] for r in similarity.rows)
        assert all(r["status"] in ("optimal", "near_optimal") for r in similarity.rows)

    def test_sound_on_samples(self, similarity):
        assert max(r["max_excess"] for r in similarity.rows) <= 1e-7

    def test_summary_recomputable(self, similarity):
        s = similarity.summary[0]
        for key in ("gamma_x", "mean_T", "mean_log_gap"):
            assert s[key] == pytest.approx(np.mean([r[key] for r in similarity.rows]), rel=1e-12)
        assert s["n_certified"] == 3

    def test_deterministic(self, similarity):
        again = experiment_similarity(SimilarityConfig(seeds=[0, 1, 2], layers=[1], n_samples=300))
        assert strip_timing(again.to_dict()) == strip_timing(similarity.to_dict())

    def test_parallel_matches_serial(self, similarity):
        par = experiment_similarity(SimilarityConfig(seeds=[0, 1, 2], layers=[1], n_samples=300, workers=2))
        assert strip_timing(par.to_dict())["rows"] == strip_timing(similarity.to_dict())["rows"]

    def test_write(self, similarity, tmp_path):
        paths = similarity.write(tmp_path)
        with open(paths["csv"]) as fh:
            header = next(csv.reader(fh))
        assert tuple(header) == ROW_SCHEMA["similarity"]
        assert json.loads(paths["config"].read_text()) == similarity.config
        assert json.loads(paths["json"].read_text())["suite"] == "similarity"


def test_quantisation_suite():
    rep = experiment_quantisation(QuantisationConfig(seeds=[0, 1], layers=[1], curve_seeds=1))
    assert all(tuple(r) == ROW_SCHEMA["quantisation"] for r in rep.rows)
    assert all(r["max_excess"] <= 1e-7 for r in rep.rows)
    assert len(rep.curves) == 100
    assert all(c["bound"] >= c["error"] - 1e-7 for c in rep.curves)


def test_worst_case_suite():
    rep = experiment_worst_case_vs_delta(WorstCaseConfig(seeds=[0], fraction_bits=[1, 4], width=4))
    assert [r["delta"] for r in rep.rows] == [0.5, 0.0625]
    for r in rep.rows:
        assert tuple(r) == ROW_SCHEMA["worstcase"]
        assert r["max_bound"] >= r["max_error"] and r["bound_at_max_error"] >= r["max_error"] - 1e-7


def test_pruning_suite():
    rep = experiment_pruning(PruningConfig(grid=100))
    row = rep.rows[0]
    assert tuple(row) == ROW_SCHEMA["pruning"] and row["status"] in ("optimal", "near_optimal")
    assert len(rep.curves) == 100 * 100
    assert all(p["bound"] >= p["error"] - 1e-7 for p in rep.curves)


def test_pruning_nothing_gives_zero_error_surface():
    rep = experiment_pruning(PruningConfig(count=0, grid=100, layers=1, width=4))
    # x1 and x2 are independent, so the error vanishes only on the diagonal
    diag = [p for p in rep.curves if p["x1"] == p["x2"]]
    assert len(diag) == 100 and all(p["error"] == 0 for p in diag)


def test_pruning_count_too_large():
    with pytest.raises(ConfigError):
        experiment_pruning(PruningConfig(count=20))


def test_suites_listed():
    assert set(SUITES) == set(ROW_SCHEMA)


def test_strip_timing():
    rep = ExperimentReport("x", {}, [{"a": 1, "runtime_s": 3.0}], [], runtime_s=2.0)
    assert strip_timing(rep.to_dict()) == {"suite": "x", "config": {}, "rows": [{"a": 1}], "summary": [],
                                           "curves": []}
