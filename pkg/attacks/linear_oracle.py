"""
    Exact optimum of the boundary search for linear-softmax toy models, used to
    check how close the attacks get.
"""

import itertools
import logging

import numpy as np

from attacks.base_attack        import PerturbationState, cw_loss, project
from classifiers.toy_model      import ToyModelSpec
from errors                     import OracleError
from imgcore                    import as_image_tensor

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_DIM = 20
BATCH_SIZE = 2 ** 14


def _cw_losses(spec, x_batch, y):
    probs = spec.forward(x_batch)
    others = np.delete(probs, y - 1, axis=1)
    return np.max(others, axis=1) - probs[:, y - 1]

def _closed_form(spec, x_org, y, eps):
    weights = spec.layers[0][0].astype(np.float64)
    direction = weights[2 - y] - weights[y - 1]
    # Zero coefficients leave the loss unchanged, +1 is as good as -1 there
    signs = np.where(direction.reshape(x_org.shape) < 0, -1, 1)
    return PerturbationState.from_signs(signs, eps)

def _exhaustive(spec, x_org, y, eps):
    flat = x_org.reshape(-1)
    best_loss = -np.inf
    best_signs = None

    patterns = itertools.product((-1, 1), repeat=flat.size)
    while True:
        batch = np.array(list(itertools.islice(patterns, BATCH_SIZE)), dtype=np.int8)
        if len(batch) == 0:
            break
        candidates = np.clip(flat + eps * batch, 0.0, 1.0)
        losses = _cw_losses(spec, candidates, y)
        idx = int(np.argmax(losses))
        if losses[idx] > best_loss:
            best_loss = losses[idx]
            best_signs = batch[idx]

    return PerturbationState.from_signs(best_signs.reshape(x_org.shape), eps)

def linear_oracle(spec, x_org, y, eps, exhaustive=False):
    """
        Return the boundary point of the eps-ball maximizing the CW loss of a
        linear-softmax model, and that loss.

        Binary models are solved sign-wise: the CW loss only depends on the
        difference of the two logits, so every coordinate follows the sign of
        its weight difference. Other models, or ``exhaustive=True``, enumerate
        all ``2**d`` sign patterns.

        Parameters
        ----------
        spec: :class:`classifiers.toy_model.ToyModelSpec`
            a linear model.
        x_org: :class:`numpy.ndarray`
            the original image tensor.
        y: :class:`int`
            the 1-based true label.
        eps: :class:`float`
            the L-infinity budget.
        exhaustive: :class:`bool, optional`
            whether to enumerate even when a closed form exists.

        Returns
        -------
        optimum: :class:`tuple(numpy.ndarray, float)`
            the projected optimal image and its CW loss.

        Raises
        ------
        OracleError:
            the model is not linear, or enumeration is required for more than
            ``MAX_EXHAUSTIVE_DIM`` coordinates.
    """

    if not isinstance(spec, ToyModelSpec) or spec.kind != "linear":
        raise OracleError("the oracle only solves linear toy models")

    x_org = as_image_tensor(x_org)
    if exhaustive or spec.class_count != 2:
        if x_org.size > MAX_EXHAUSTIVE_DIM:
            raise OracleError(
                f"exhaustive search over {x_org.size} coordinates "
                f"(at most {MAX_EXHAUSTIVE_DIM})"
            )
        state = _exhaustive(spec, x_org, y, eps)
    else:
        state = _closed_form(spec, x_org, y, eps)

    x_opt = project(x_org + state.perturbation)
    loss = cw_loss(spec.forward(x_opt), y)
    logger.debug(f"oracle optimum loss={loss:.12f}")
    return x_opt, loss
