import itertools

import numpy as np
import pytest

from attacks.base_attack        import cw_loss
from attacks.linear_oracle      import linear_oracle
from attacks.sign_hunter        import signhunter
from attacks.superpixel_attack  import versatile_search
from classifiers.toy_model      import (ToyModel, binary_linear_spec, linear_spec,
                                        random_mlp_spec)
from errors                     import OracleError

MODELS = 50
EPS = 0.1


def random_binary_case(seed):
    rng = np.random.default_rng(seed)
    side = (2, 3, 4)[seed % 3]
    shape = (side, side, 1)
    spec = binary_linear_spec(rng.normal(0, 1, size=shape), shape)
    x_org = rng.uniform(0, 1, size=shape)
    y = int(rng.integers(1, 3))
    return spec, x_org, y


### Oracle ###
def test_two_by_two_example():
    field = np.array([[1.0, -1.0], [2.0, -3.0]]).reshape(2, 2, 1)
    spec = binary_linear_spec(field, (2, 2, 1))
    x_org = np.full((2, 2, 1), 0.5)

    x_opt, loss = linear_oracle(spec, x_org, 1, EPS)
    np.testing.assert_allclose(x_opt[..., 0], [[0.6, 0.4], [0.6, 0.4]])

    _, exhaustive_loss = linear_oracle(spec, x_org, 1, EPS, exhaustive=True)
    assert loss == pytest.approx(exhaustive_loss, abs=1e-12)

def test_closed_form_matches_enumeration():
    for seed in range(30):
        spec, x_org, y = random_binary_case(seed)
        if x_org.size > 9:
            continue
        _, closed = linear_oracle(spec, x_org, y, EPS)
        _, exhaustive = linear_oracle(spec, x_org, y, EPS, exhaustive=True)
        assert closed == pytest.approx(exhaustive, abs=1e-12)

def test_identical_rows_make_every_corner_optimal(rng):
    row = rng.normal(0, 1, size=4)
    spec = linear_spec(np.stack([row, row]), [0.3, 0.3], (2, 2, 1))
    x_org = rng.uniform(0, 1, size=(2, 2, 1))

    _, loss = linear_oracle(spec, x_org, 1, EPS)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert cw_loss(spec.forward(x_org), 2) == pytest.approx(0.0, abs=1e-12)

def test_single_pixel_takes_the_better_corner():
    spec = binary_linear_spec([-2.0], (1, 1, 1))
    x_org = np.full((1, 1, 1), 0.5)
    x_opt, loss = linear_oracle(spec, x_org, 2, EPS)

    candidates = [cw_loss(spec.forward(np.full((1, 1, 1), v)), 2) for v in (0.4, 0.6)]
    assert x_opt.tolist() == [[[0.6]]]
    assert loss == pytest.approx(max(candidates))

def test_multiclass_models_are_enumerated(rng):
    spec = linear_spec(rng.normal(0, 1, size=(3, 4)), rng.normal(0, 1, size=3), (2, 2, 1))
    x_org = rng.uniform(0, 1, size=(2, 2, 1))
    _, loss = linear_oracle(spec, x_org, 3, EPS)

    corners = [np.clip(x_org + EPS * np.array(signs).reshape(2, 2, 1), 0, 1)
               for signs in itertools.product((-1, 1), repeat=4)]
    assert loss == pytest.approx(max(cw_loss(spec.forward(c), 3) for c in corners), abs=1e-12)

def test_oracle_limits(rng):
    with pytest.raises(OracleError):
        linear_oracle(random_mlp_spec((2, 2, 1), (4,), 2, rng), np.zeros((2, 2, 1)), 1, EPS)

    big = binary_linear_spec(np.ones(27), (3, 3, 3))
    with pytest.raises(OracleError):
        linear_oracle(big, np.zeros((3, 3, 3)), 1, EPS, exhaustive=True)
    # The binary closed form has no size limit
    linear_oracle(big, np.zeros((3, 3, 3)), 1, EPS)



### Attacks against the oracle ###
def test_versatile_search_reaches_the_optimum():
    for seed in range(MODELS):
        spec, x_org, y = random_binary_case(seed)
        _, optimum = linear_oracle(spec, x_org, y, EPS, exhaustive=True)
        trace = versatile_search(ToyModel(spec), x_org, y, eps=EPS, T=200, early_stop=False,
                                 rng=np.random.default_rng(seed))

        assert trace.best_loss == pytest.approx(optimum, abs=1e-9), f"model {seed}"

def test_signhunter_mostly_reaches_the_optimum():
    reached = 0
    for seed in range(MODELS):
        spec, x_org, y = random_binary_case(seed)
        _, optimum = linear_oracle(spec, x_org, y, EPS, exhaustive=True)
        trace = signhunter(ToyModel(spec), x_org, y, eps=EPS, T=4 * x_org.size + 4,
                           early_stop=False)
        reached += abs(trace.best_loss - optimum) <= 1e-9

    assert reached >= 0.95 * MODELS
