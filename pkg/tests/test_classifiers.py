import json
import math
from concurrent.futures         import ThreadPoolExecutor

import numpy as np
import pytest

from attacks.base_attack        import cw_loss
from classifiers.base_classifier import UniformClassifier, on_simplex, softmax
from classifiers.toy_model      import (ToyModel, ToyModelSpec, linear_spec, load_toy_model,
                                        random_mlp_spec, read_toy_spec, save_toy_model)
from errors                     import ModelSpecError, ShapeError


### Probabilities ###
def test_softmax_is_shift_invariant():
    probs = softmax(np.array([1000.0, 1001.0]))
    assert probs == pytest.approx([1 / (1 + math.e), math.e / (1 + math.e)])

def test_on_simplex():
    assert on_simplex([0.25, 0.75])
    assert on_simplex([0.5, 0.5 + 5e-6])
    assert not on_simplex([0.5, 0.6])
    assert not on_simplex([1.2, -0.2])



### Toy Models ###
def test_zero_weights_give_uniform_probabilities():
    spec = linear_spec(np.zeros((4, 12)), np.zeros(4), (2, 2, 3))
    assert ToyModel(spec).predict(np.full((2, 2, 3), 0.3)).tolist() == [0.25] * 4

def test_predict_is_deterministic_and_counted(rng):
    model = ToyModel(random_mlp_spec((3, 3, 3), (5,), 4, rng))
    x = rng.uniform(0, 1, size=(3, 3, 3))

    first = model.predict(x)
    second = model.predict(x)
    assert first.tobytes() == second.tobytes()
    assert model.query_count == 2
    assert on_simplex(first)

def test_predict_checks_the_shape(rng):
    model = ToyModel(random_mlp_spec((3, 3, 3), (), 2, rng))
    with pytest.raises(ShapeError):
        model.predict(np.zeros((3, 3, 1)))
    assert model.query_count == 0

def test_mlp_forward_by_hand():
    # 1x1x2 input -> 2 hidden ReLU units -> 2 classes
    spec = ToyModelSpec.create("mlp", [
        ([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.5]),
        ([[2.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
    ], (1, 1, 2))
    x = np.array([[[0.25, 0.75]]])

    hidden = [max(0.25, 0.0), max(-0.75 + 0.5, 0.0)]
    logits = [2 * hidden[0], hidden[1]]
    total = math.exp(logits[0]) + math.exp(logits[1])
    assert spec.forward(x) == pytest.approx([math.exp(logits[0]) / total,
                                             math.exp(logits[1]) / total], abs=1e-15)

def test_equal_rows_have_zero_margin(rng):
    row = rng.normal(0, 1, size=4)
    model = ToyModel(linear_spec(np.stack([row, row]), [0.1, 0.1], (2, 2, 1)))
    probs = model.predict(rng.uniform(0, 1, size=(2, 2, 1)))

    assert cw_loss(probs, 1) == 0.0
    assert cw_loss(probs, 2) == 0.0

def test_batched_logits_match_single_images(rng):
    spec = random_mlp_spec((2, 3, 3), (6,), 3, rng)
    batch = rng.uniform(0, 1, size=(5, 18))
    single = np.stack([spec.logits(x.reshape(2, 3, 3)) for x in batch])
    np.testing.assert_allclose(spec.logits(batch), single, atol=1e-12)

@pytest.mark.parametrize("kind,layers,shape,count", [
    ("cnn", [(np.zeros((2, 4)), np.zeros(2))], (2, 2, 1), None),
    ("linear", [(np.zeros((2, 5)), np.zeros(2))], (2, 2, 1), None),
    ("linear", [(np.zeros((2, 4)), np.zeros(3))], (2, 2, 1), None),
    ("linear", [(np.zeros((2, 4)), np.zeros(2))], (2, 2, 1), 3),
    ("linear", [(np.zeros((1, 4)), np.zeros(1))], (2, 2, 1), None),
    ("mlp", [(np.zeros((3, 4)), np.zeros(3)), (np.zeros((2, 4)), np.zeros(2))], (2, 2, 1), None),
    ("linear", [(np.zeros((2, 4)), np.zeros(2))] * 2, (2, 2, 1), None),
])
def test_invalid_specs(kind, layers, shape, count):
    with pytest.raises(ModelSpecError):
        ToyModelSpec.create(kind, layers, shape, count)

def test_uniform_classifier():
    model = UniformClassifier(5)
    assert model.predict(np.zeros((1, 1, 3))).tolist() == [0.2] * 5
    with pytest.raises(ValueError):
        UniformClassifier(1)

def test_query_counter_is_thread_safe():
    model = UniformClassifier(2)
    x = np.zeros((2, 2, 3))
    with ThreadPoolExecutor(max_workers=8) as executor:
        list(executor.map(lambda _: model.predict(x), range(800)))

    assert model.query_count == 800



### Weights Files ###
def test_save_and_load_preserve_predictions(tmp_path, rng):
    spec = random_mlp_spec((4, 4, 3), (8, 6), 5, rng)
    path = str(tmp_path / "model.bin")
    save_toy_model(spec, path)
    model = load_toy_model(path)

    x = rng.uniform(0, 1, size=(4, 4, 3))
    assert model.spec.kind == "mlp"
    assert model.spec.shapes == spec.shapes
    assert model.predict(x).tobytes() == ToyModel(spec).predict(x).tobytes()

def test_weights_header(tmp_path, rng):
    spec = random_mlp_spec((2, 2, 3), (), 3, rng)
    path = tmp_path / "linear.bin"
    save_toy_model(spec, str(path))

    header, payload = path.read_bytes().split(b"\n", 1)
    assert json.loads(header) == {"kind": "linear", "shapes": [[3, 12], [3]], "Y": 3,
                                  "input": [2, 2, 3]}
    assert len(payload) == (36 + 3) * 4

def test_hand_built_weights_file(tmp_path):
    header = b'{"kind":"linear","shapes":[[2,1],[2]],"Y":2,"input":[1,1,1]}\n'
    payload = np.array([1.0, -1.0, 0.0, 0.5], dtype="<f4").tobytes()
    path = tmp_path / "hand.bin"
    path.write_bytes(header + payload)

    spec = read_toy_spec(str(path))
    assert spec.class_count == 2
    assert spec.input_shape == (1, 1, 1)
    assert spec.logits(np.ones((1, 1, 1))).tolist() == [1.0, -0.5]

@pytest.mark.parametrize("raw", [
    b"",
    b"not json\n",
    b'{"kind":"linear","shapes":[[2,1]],"Y":2,"input":[1,1,1]}\n' + bytes(8),
    b'{"kind":"linear","shapes":[[2,1],[2]],"Y":2,"input":[1,1,1]}\n' + bytes(15),
    b'{"kind":"linear","shapes":[[2,3],[2]],"Y":2,"input":[1,1,1]}\n' + bytes(32),
    b'{"kind":"linear","shapes":[[2,1],[2]],"Y":2}\n' + bytes(16),
])
def test_malformed_weights_files(tmp_path, raw):
    path = tmp_path / "bad.bin"
    path.write_bytes(raw)
    with pytest.raises(ModelSpecError):
        read_toy_spec(str(path))

def test_missing_weights_file(tmp_path):
    with pytest.raises(ModelSpecError):
        load_toy_model(str(tmp_path / "missing.bin"))
