import math
from dataclasses                import replace
from os.path                    import join

import numpy as np
import pytest

from attacks.linear_oracle      import linear_oracle
from classifiers.base_classifier import BaseClassifier
from classifiers.toy_model      import ToyModel, binary_linear_spec, random_mlp_spec
from errors                     import ConfigError, ImageReadError, ModelTransportError
from experiments.experiment     import (ExperimentConfig, image_rng, load_config,
                                        read_manifest, run_experiment)
from imgcore                    import load_png
from pxattack                   import load_attacks
from utils                      import set_csv_rows

BASE = {"version": 1, "attack": "superpixel", "dataset": "d.csv", "model": {"toy": "m.bin"}}


class FailOnBrightCorner(BaseClassifier):
    """Wraps a toy spec and fails whenever the top-left value is nearly white."""

    def __init__(self, spec):
        super().__init__(spec.input_shape, spec.class_count)
        self.spec = spec

    def forward(self, x):
        if x[0, 0, 0] >= 0.85:
            raise ModelTransportError("connection reset")
        return self.spec.forward(x)


def uniform_image(value, shape=(2, 2, 3)):
    return np.full(shape, value, dtype=np.uint8)


### Configuration ###
@pytest.mark.parametrize("changes", [
    {"version": 2},
    {"version": None},
    {"attack": None},
    {"dataset": None},
    {"model": None},
    {"model": "m.bin"},
    {"model": {"weights": "m.bin"}},
    {"epsilon": 0},
    {"epsilon": -0.1},
    {"iterations": 0},
    {"jobs": 0},
    {"iterations": 10, "checkpoints": [5, 11]},
    {"checkpoints": [0]},
    {"attack_params": [1, 2]},
])
def test_invalid_configs(changes):
    data = dict(BASE)
    for key, value in changes.items():
        if value is None:
            data.pop(key)
        else:
            data[key] = value

    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)

def test_empty_config():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({})

def test_defaults_and_paths(tmp_path):
    config = ExperimentConfig.from_dict(dict(BASE, iterations=50), str(tmp_path))

    assert config.epsilon == pytest.approx(4 / 255)
    assert config.seed == 0
    assert config.early_stop
    assert config.checkpoints == (50,)
    assert config.dataset == join(str(tmp_path), "d.csv")
    assert config.model["toy"] == join(str(tmp_path), "m.bin")
    assert config.output_dir == join(str(tmp_path), "results")
    assert not config.is_external

    config = ExperimentConfig.from_dict(dict(BASE), str(tmp_path))
    assert config.iterations == 1000
    assert config.checkpoints == (100, 1000)

def test_external_models_keep_their_target(tmp_path):
    data = dict(BASE, model={"external": "python serve.py", "cwd": "models"})
    config = ExperimentConfig.from_dict(data, str(tmp_path))

    assert config.is_external
    assert config.model["external"] == "python serve.py"
    assert config.model["cwd"] == join(str(tmp_path), "models")

def test_with_attack():
    config = ExperimentConfig.from_dict(dict(BASE, attack_params={"alpha": 3.0}))
    other = config.with_attack("square", p_init=0.1)

    assert other.attack == "square"
    assert other.attack_params == {"p_init": 0.1}
    assert config.attack_params == {"alpha": 3.0}

def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))



### Manifests ###
def test_read_manifest(tmp_path):
    path = str(tmp_path / "manifest.csv")
    set_csv_rows(path, ("path", "label"), [("a.png", 1), ("sub/b.rtf", 3)])
    entries = read_manifest(path)

    assert [(e.image_id, e.label) for e in entries] == [(0, 1), (1, 3)]
    assert entries[1].path == join(str(tmp_path), "sub", "b.rtf")

@pytest.mark.parametrize("rows", [
    [("a.png", 0)],
    [("a.png", "cat")],
    [("a.png", "")],
])
def test_invalid_manifests(tmp_path, rows):
    path = str(tmp_path / "manifest.csv")
    set_csv_rows(path, ("path", "label"), rows)
    with pytest.raises(ConfigError):
        read_manifest(path)

def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigError):
        read_manifest(str(tmp_path / "missing.csv"))

def test_image_rng_depends_on_seed_and_image():
    first = image_rng(0, 3).random(4)
    assert first.tolist() == image_rng(0, 3).random(4).tolist()
    assert first.tolist() != image_rng(0, 4).random(4).tolist()
    assert first.tolist() != image_rng(1, 3).random(4).tolist()



### Runner ###
def test_clean_misclassification_counts_at_iteration_zero(make_dataset):
    spec = binary_linear_spec(np.ones(12), (2, 2, 3))
    config = load_config(make_dataset([uniform_image(100)], [1], spec))
    report = run_experiment(config, load_attacks())

    [result] = report.results
    assert not result.clean_correct
    assert result.success
    assert result.first_success_iter == 0
    assert result.queries == 0
    assert report.checkpoint_rates() == {10: 100.0, 50: 100.0}
    assert report.curve()[0] == (0, 100.0)
    assert report.clean_accuracy() == 0.0

def test_ample_budget_reaches_full_success(make_dataset):
    img = np.zeros((2, 2, 3), dtype=np.uint8)
    img[0], img[1] = 153, 128
    spec = binary_linear_spec([1.0] * 6 + [-1.0] * 6, (2, 2, 3))
    config = load_config(make_dataset([img], [2], spec, epsilon=0.5))
    report = run_experiment(config, load_attacks())

    x_org = load_png(config.dataset.replace("manifest.csv", "img0.png"))
    _, optimum = linear_oracle(spec, x_org, 2, 0.5)
    assert optimum > 0

    [result] = report.results
    assert result.clean_correct
    assert result.success
    assert 1 <= result.first_success_iter == result.queries <= 50
    assert report.checkpoint_rates()[50] == 100.0

def test_parallel_runs_match_serial_runs(make_dataset):
    rng = np.random.default_rng(7)
    images = [rng.integers(0, 256, size=(6, 6, 3)) for _ in range(6)]
    spec = random_mlp_spec((6, 6, 3), (8,), 3, rng, scale=3.0)
    path = make_dataset(images, [1, 2, 3, 1, 2, 3], spec, epsilon=0.05, iterations=40,
                        checkpoints=[40])

    config = load_config(path)
    serial = run_experiment(config, load_attacks())
    parallel = run_experiment(replace(config, jobs=4), load_attacks())

    def key(result):
        return (result.image_id, result.success, result.first_success_iter,
                result.final_loss, result.queries, result.error)

    assert [key(r) for r in serial.results] == [key(r) for r in parallel.results]
    assert [r.image_id for r in parallel.results] == list(range(6))

def test_traces_are_dropped_unless_asked_for(make_dataset, rng):
    spec = random_mlp_spec((2, 2, 3), (), 2, rng)
    config = load_config(make_dataset([uniform_image(40)], [1], spec, early_stop=False,
                                      clean_query=False, iterations=5, checkpoints=[5]))

    assert run_experiment(config, load_attacks()).results[0].trace is None
    [result] = run_experiment(config, load_attacks(), keep_traces=True).results
    assert result.trace.queries == 5
    assert result.queries == 5

@pytest.mark.parametrize("changes", [
    {"attack": "pixel-storm"},
    {"attack_params": {"segment_ratio": 1}},
    {"attack_params": {"colour": "blue"}},
    {"attack": "square", "attack_params": {"p_init": 2.0}},
])
def test_invalid_attacks(make_dataset, rng, changes):
    spec = random_mlp_spec((2, 2, 3), (), 2, rng)
    config = load_config(make_dataset([uniform_image(40)], [1], spec, **changes))
    with pytest.raises(ConfigError):
        run_experiment(config, load_attacks())

def test_model_failures_are_recorded(make_dataset, rng):
    spec = random_mlp_spec((2, 2, 3), (), 2, rng)
    bright = uniform_image(40)
    bright[0, 0, 0] = 255
    config = load_config(make_dataset([uniform_image(40), bright, uniform_image(60)],
                                      [1, 1, 1], spec, early_stop=False, clean_query=False,
                                      iterations=8, checkpoints=[8]))
    report = run_experiment(config, load_attacks(), model=FailOnBrightCorner(spec))

    assert [r.image_id for r in report.results] == [0, 1, 2]
    failed = report.results[1]
    assert "connection reset" in failed.error
    assert not failed.success
    assert failed.queries == 0
    assert math.isnan(failed.final_loss)
    for result in (report.results[0], report.results[2]):
        assert result.error is None
        assert result.queries == 8

def test_unreadable_images(make_dataset, rng, tmp_path):
    spec = random_mlp_spec((2, 2, 3), (), 2, rng)
    config = load_config(make_dataset([uniform_image(40)], [1], spec))
    (tmp_path / "img0.png").write_bytes(b"not a png")

    with pytest.raises(ImageReadError):
        run_experiment(config, load_attacks())

def test_toy_models_are_opened_from_the_config(make_dataset, rng):
    spec = random_mlp_spec((2, 2, 3), (), 2, rng)
    config = load_config(make_dataset([uniform_image(40)], [2], spec, iterations=3,
                                      checkpoints=[3], early_stop=False, clean_query=False))
    report = run_experiment(config, load_attacks())

    x_org = load_png(config.dataset.replace("manifest.csv", "img0.png"))
    trace = run_experiment(config, load_attacks(), model=ToyModel(spec),
                           keep_traces=True).results[0].trace
    assert report.results[0].final_loss == trace.best_loss
    assert np.max(np.abs(trace.x_best - x_org)) <= 0.1 + 1e-12
