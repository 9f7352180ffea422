import json

import pytest

from config.schemas import (
    DiscreteProblemSpec,
    ExperimentConfig,
    PushforwardSpec,
    SolveSpec,
    UniformBoxSpec,
    parse_model,
)
from config.settings import load_config_file
from lib.transport.exceptions import ConfigError

PRESETS = [
    "config/experiments/cost_1d.json",
    "config/experiments/wp_1d.json",
    "config/experiments/potentials_1d.json",
    "config/experiments/sup_norm_potentials_1d.json",
    "config/experiments/sup_of_gaussian_2x2.json",
]


@pytest.mark.parametrize("path", PRESETS)
def test_experiment_presets_validate(path):
    cfg = parse_model(ExperimentConfig, load_config_file(path), path=path)
    assert cfg.replicates >= 2 and cfg.n >= 1


def test_solve_presets_validate():
    spec = parse_model(SolveSpec, load_config_file("config/experiments/solve_2d.json"))
    assert isinstance(spec.Q, UniformBoxSpec)
    assert spec.solver.backend == "quadrature"
    parse_model(DiscreteProblemSpec, load_config_file("config/experiments/discrete_2x2.json"))


def test_nested_pushforward_is_discriminated():
    spec = parse_model(SolveSpec, {
        "P": {"type": "discrete", "points": [0.0, 1.0], "weights": [0.5, 0.5]},
        "Q": {"type": "pushforward", "map": "sqrt", "base": {"type": "uniform_box", "lo": [0.0], "hi": [1.0]}},
    })
    assert isinstance(spec.Q, PushforwardSpec)
    assert isinstance(spec.Q.base, UniformBoxSpec)


@pytest.mark.parametrize("payload", [
    {"P": {"type": "discrete", "points": [0.0], "weights": [1.0]},
     "Q": {"type": "uniform_box", "lo": [0.0], "hi": [1.0]}, "n": 10, "replicates": 1},
    {"P": {"type": "discrete", "points": [0.0], "weights": [1.0]},
     "Q": {"type": "uniform_box", "lo": [1.0], "hi": [0.0]}, "n": 10, "replicates": 5},
    {"P": {"type": "discrete", "points": [0.0, 1.0], "weights": [1.0]},
     "Q": {"type": "uniform_box", "lo": [0.0], "hi": [1.0]}, "n": 10, "replicates": 5},
    {"P": {"type": "discrete", "points": [0.0], "weights": [1.0]},
     "Q": {"type": "uniform_box", "lo": [0.0], "hi": [1.0]}, "n": 10, "replicates": 5, "contrast": [1, 1]},
    {"P": {"type": "discrete", "points": [0.0], "weights": [1.0]},
     "Q": {"type": "uniform_box", "lo": [0.0], "hi": [1.0]}, "n": 10, "replicates": 5, "colour": "red"},
])
def test_invalid_experiment_configs(payload):
    with pytest.raises(ConfigError):
        parse_model(ExperimentConfig, payload)


def test_discrete_problem_needs_a_source():
    with pytest.raises(ConfigError):
        parse_model(DiscreteProblemSpec, {"p": [0.5, 0.5], "q": [0.5, 0.5]})


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config_file(str(broken))
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"a": 1}))
    assert load_config_file(str(good)) == {"a": 1}
