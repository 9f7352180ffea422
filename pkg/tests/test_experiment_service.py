import os

import numpy as np
import pytest

from config.schemas import ExperimentConfig, parse_model
from config.settings import load_config_file
from core.services.experiment_service import (
    ExperimentService,
    emit_report,
    ks_critical_value,
    ks_statistic,
    run_experiment,
)
from lib.transport.exceptions import ExperimentFailedError, InvalidArgumentError
from services.inference import GAUSSIAN, SUP_ABS_GAUSSIAN, SUP_OF_GAUSSIAN, LimitLaw
from utils.data_processor import DataProcessor

ONE_D = {
    "P": {"type": "discrete", "points": [0.0, 1.0], "weights": [0.25, 0.75]},
    "Q": {"type": "uniform_box", "lo": [0.0], "hi": [1.0]},
    "cost": {"cost": "power", "exponent": 2.0},
}
TWO_BY_TWO = {
    "P": {"type": "discrete", "points": [0.0, 1.0], "weights": [0.5, 0.5]},
    "Q": {"type": "discrete", "points": [0.0, 1.0], "weights": [0.5, 0.5]},
    "cost": {"cost": "power", "exponent": 1.0},
}


def small_config(base=ONE_D, **overrides) -> ExperimentConfig:
    payload = {**base, "name": "small", "n": 1000, "replicates": 200, "law_draws": 5000,
               "ks_threshold": 0.2, "variance_tolerance": 0.35, **overrides}
    return ExperimentConfig.model_validate(payload)


class TestKolmogorovSmirnov:
    def test_shifted_normals(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(10_000)
        b = rng.standard_normal(10_000) + 1.0
        assert ks_statistic(a, b) > 0.3

    def test_identical_samples(self):
        sample = np.linspace(0.0, 1.0, 50)
        assert ks_statistic(sample, sample) == 0.0

    def test_critical_value(self):
        assert ks_critical_value(100, 100) == pytest.approx(1.36 * np.sqrt(0.02))

    def test_empty_sample(self):
        with pytest.raises(InvalidArgumentError):
            ks_statistic([], [1.0])


class TestExperimentService:
    def test_defaults(self):
        service = ExperimentService(small_config())
        assert service.backend == "exact1d"
        assert service.contrast == (0, 1)
        assert ExperimentService(small_config(backend="quadrature")).backend == "quadrature"
        assert ExperimentService(small_config(TWO_BY_TWO)).backend == "lp"

    def test_potential_statistics_need_continuous_Q(self):
        with pytest.raises(InvalidArgumentError):
            ExperimentService(small_config(TWO_BY_TWO, statistic="potentials"))

    def test_replicates_do_not_depend_on_the_run_size(self):
        short = ExperimentService(small_config(replicates=10))
        long = ExperimentService(small_config(replicates=50))
        short.prepare_truth()
        long.prepare_truth()
        values = [short.run_replicate(i) for i in range(5)]
        assert values == [long.run_replicate(i) for i in range(5)]
        assert len(set(values)) > 1

    def test_truth(self):
        service = ExperimentService(small_config())
        service.prepare_truth()
        assert service.truth_cost == pytest.approx(7.0 / 48.0, abs=1e-12)
        assert service.truth_potentials == pytest.approx([-0.25, 0.25])

    @pytest.mark.parametrize("statistic, kind", [
        ("cost", GAUSSIAN),
        ("wp", GAUSSIAN),
        ("potentials", GAUSSIAN),
        ("sup_norm_potentials", SUP_ABS_GAUSSIAN),
    ])
    def test_law_kinds(self, statistic, kind):
        service = ExperimentService(small_config(statistic=statistic))
        service.prepare_truth()
        assert service.build_law().kind == kind

    def test_cost_experiment(self):
        report = run_experiment(small_config())
        assert len(report.replicate_statistics) == 200
        assert report.failed == []
        metrics = report.metrics
        assert metrics["law_variance"] == pytest.approx(3.0 / 64.0)
        assert metrics["checks"]["ks"] and metrics["checks"]["variance"]
        assert metrics["passed"]
        assert [row["level"] for row in metrics["quantiles"]] == [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99]

    def test_potentials_experiment(self):
        report = run_experiment(small_config(statistic="potentials"))
        assert report.metrics["law_variance"] == pytest.approx(0.75)
        assert report.metrics["passed"]

    def test_quadrature_backend_with_warm_starts(self):
        report = run_experiment(small_config(backend="quadrature", replicates=20, law_draws=1000,
                                             ks_threshold=1.0, variance_tolerance=10.0))
        assert report.truth["backend"] == "quadrature"
        assert len(report.replicate_statistics) == 20

    def test_is_deterministic(self):
        cfg = small_config(replicates=40, law_draws=2000)
        first = DataProcessor.dumps(run_experiment(cfg))
        second = DataProcessor.dumps(run_experiment(cfg))
        assert first == second

    def test_worker_count_does_not_change_results(self):
        one = run_experiment(small_config(replicates=30, law_draws=1000, workers=1))
        many = run_experiment(small_config(replicates=30, law_draws=1000, workers=4))
        assert one.replicate_statistics == many.replicate_statistics

    def test_law_override(self):
        report = run_experiment(small_config(replicates=40, law_draws=2000),
                                law_override=LimitLaw(GAUSSIAN, variance=100.0))
        assert report.law.variance == 100.0
        assert not report.metrics["checks"]["variance"]
        assert not report.metrics["passed"]

    def test_discrete_fluctuations_are_nonnegative(self):
        report = run_experiment(small_config(TWO_BY_TWO, law_draws=2000, mean_tolerance=0.07))
        assert report.law.kind == SUP_OF_GAUSSIAN
        assert report.metrics["nonnegative_fraction"] >= 0.99
        assert report.metrics["empirical_mean"] == pytest.approx(np.sqrt(2.0 / np.pi) / 2.0, abs=0.07)

    def test_discrete_truth_matches_rational_optimum(self):
        service = ExperimentService(small_config(TWO_BY_TWO))
        service.prepare_truth()
        assert service.truth_cost == pytest.approx(0.0, abs=1e-12)
        assert service.check_truth_exactly() <= 1e-12

    def test_sup_of_gaussian_draws_are_capped(self, monkeypatch):
        monkeypatch.setattr("core.services.experiment_service.SUP_OF_GAUSSIAN_MAX_DRAWS", 100)
        report = run_experiment(small_config(TWO_BY_TWO, replicates=10, law_draws=500,
                                             ks_threshold=1.0, variance_tolerance=10.0))
        assert report.law_draws == 100
        assert report.law_sample.size == 100

    def test_too_many_failed_replicates(self):
        # n = 1 always leaves one atom empty, so no potential can be estimated
        cfg = small_config(statistic="potentials", backend="quadrature", n=1, replicates=10)
        with pytest.raises(ExperimentFailedError):
            run_experiment(cfg)


class TestEmitReport:
    def test_json_round_trip(self, tmp_path):
        report = run_experiment(small_config(replicates=30, law_draws=500))
        (path,) = emit_report(report, out_dir=str(tmp_path))
        assert os.path.basename(path) == "small.json"
        data = DataProcessor.read_json(path)
        assert data["metrics"]["passed"] == report.metrics["passed"]
        assert data["replicate_statistics"] == pytest.approx(report.replicate_statistics)
        assert "law_sample" not in data

    def test_csv_rows(self, tmp_path):
        report = run_experiment(small_config(replicates=30, law_draws=500))
        paths = emit_report(report, format="csv", out_dir=str(tmp_path))
        assert [os.path.basename(p) for p in paths] == ["small.json", "small.csv"]
        samples = DataProcessor.read_samples_csv(paths[1])
        assert len(samples["replicate"]) == 30
        assert len(samples["law"]) == 500

    def test_unknown_format(self, tmp_path):
        report = run_experiment(small_config(replicates=30, law_draws=500))
        with pytest.raises(InvalidArgumentError):
            emit_report(report, format="xml", out_dir=str(tmp_path))


PRESETS = [
    "config/experiments/cost_1d.json",
    "config/experiments/wp_1d.json",
    "config/experiments/potentials_1d.json",
    "config/experiments/sup_norm_potentials_1d.json",
    "config/experiments/sup_of_gaussian_2x2.json",
]


@pytest.mark.slow
@pytest.mark.parametrize("path", PRESETS)
def test_full_size_presets_pass(path):
    cfg = parse_model(ExperimentConfig, load_config_file(path), path=path)
    report = run_experiment(cfg)
    assert report.metrics["passed"], report.metrics["checks"]
    if cfg.Q.type == "discrete":
        assert report.metrics["nonnegative_fraction"] >= 0.99
