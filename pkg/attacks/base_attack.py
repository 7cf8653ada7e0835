import logging
import math
import time
from dataclasses                import dataclass, field
from typing                     import List, Optional

import numpy as np

import settings
from errors                     import ModelError, ShapeError
from imgcore                    import as_image_tensor

logger = logging.getLogger(__name__)

LOSS_SIMPLEX_TOLERANCE = 1e-6


### Losses ###
def _check_label(probs, y):
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if len(probs) < 2:
        raise ValueError(f"at least 2 classes are required, got {len(probs)}")
    if abs(np.sum(probs) - 1) > LOSS_SIMPLEX_TOLERANCE:
        raise ValueError(f"probabilities sum to {np.sum(probs)!r}, not 1")
    if not 1 <= y <= len(probs):
        raise ValueError(f"label {y} is out of range 1..{len(probs)}")
    return probs

def cw_loss(probs, y):
    """
        Return the CW margin ``max_{i != y} p_i - p_y`` of a probability vector for
        the 1-based true label ``y``. The margin is positive iff the highest
        probability belongs to a wrong class.

        Raises
        ------
        ValueError:
            ``probs`` has fewer than 2 classes or does not sum to 1 within 1e-6.
            Also raised when ``y`` is out of range.
    """

    probs = _check_label(probs, y)
    return float(np.max(np.delete(probs, y - 1)) - probs[y - 1])

def ce_loss(probs, y):
    """Return the cross-entropy ``-log p_y``, which grows as ``p_y`` falls."""

    probs = _check_label(probs, y)
    return float(-math.log(max(probs[y - 1], 1e-12)))

LOSSES = {"cw": cw_loss, "ce": ce_loss}



### Perturbations ###
def project(x):
    """Clamp ``x`` element-wise into the image space ``[0, 1]``."""

    return as_image_tensor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0), copy=False)


@dataclass(frozen=True)
class PerturbationState:
    """
        A boundary perturbation ``eps * signs`` with ``signs`` over ``{-1, +1}``.
    """

    eps: float
    signs: np.ndarray

    @classmethod
    def filled(cls, shape, eps, sign=1):
        signs = np.full(shape, sign, dtype=np.int8)
        signs.setflags(write=False)
        return cls(eps, signs)

    @classmethod
    def from_signs(cls, signs, eps):
        signs = np.array(signs, dtype=np.int8)
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must all be -1 or +1")
        signs.setflags(write=False)
        return cls(eps, signs)

    @property
    def shape(self):
        return self.signs.shape

    @property
    def perturbation(self):
        return self.eps * self.signs.astype(np.float64)

    def apply(self, x_org):
        return project(x_org + self.perturbation)



### Traces ###
@dataclass
class IterationRecord:
    t: int
    loss: float
    best_loss: float
    accepted: bool
    queries_used: int


@dataclass
class AttackTrace:
    """
        Everything one attack run produced. ``best_loss`` in the records never
        decreases and ``queries`` never exceeds the iteration budget.
    """

    attack: str
    label: int
    records: List[IterationRecord] = field(default_factory=list)
    x_best: Optional[np.ndarray] = None
    best_state: Optional[PerturbationState] = None
    best_loss: float = -math.inf
    best_probs: Optional[np.ndarray] = None
    first_success_iter: Optional[int] = None
    queries: int = 0
    error: Optional[str] = None
    anomalies: List[str] = field(default_factory=list)
    seg_seconds: float = 0.0
    query_seconds: float = 0.0
    total_seconds: float = 0.0

    # Superpixel Attack bookkeeping: n per refinement level, the level
    # segmentations and the (level, segment id) of every extracted area
    schedule: List[int] = field(default_factory=list)
    segmentations: list = field(default_factory=list)
    used_areas: List[tuple] = field(default_factory=list)

    @property
    def success(self):
        return self.first_success_iter is not None

    @property
    def iterations(self):
        return len(self.records)

    @property
    def final_loss(self):
        return self.best_loss

    def best_losses(self):
        return [record.best_loss for record in self.records]



### Attacks ###
class BaseAttack:
    """
        Shared machinery of the query-only attacks: one model query per iteration,
        loss bookkeeping, early stopping and failure handling. Subclasses
        implement ``search``.
    """

    name = None

    def __init__(self, eps=settings.EPSILON, iterations=settings.ITERATIONS,
                 loss="cw", early_stop=True):
        if eps < 0:
            raise ValueError("'eps' must be a non-negative value")
        if iterations < 1:
            raise ValueError("'iterations' must be at least 1")
        if loss not in LOSSES:
            raise ValueError(f"Unknown loss '{loss}', expected one of {sorted(LOSSES)}")

        self.eps = eps
        self.iterations = iterations
        self.loss_name = loss
        self.loss_fn = LOSSES[loss]
        self.early_stop = early_stop

    @classmethod
    def from_config(cls, config, **kwargs):
        """
            Return an attack built from an experiment configuration.

            Parameters
            ----------
            config: :class:`experiments.experiment.ExperimentConfig`
                the experiment configuration.
            **kwargs:
                shared resources (e.g. a segmentation cache), ignored by attacks
                that have no use for them.

            Returns
            -------
            attack: :class:`BaseAttack`
                the configured attack.
        """

        return cls(eps=config.epsilon, iterations=config.iterations,
                   early_stop=config.early_stop, **config.attack_params)

    def run(self, model, x_org, y, rng):
        """
            Attack ``x_org`` with true label ``y``. Model failures do not propagate:
            the returned trace carries ``error`` and the results gathered so far.

            Parameters
            ----------
            model: :class:`classifiers.base_classifier.BaseClassifier`
                the black-box classifier.
            x_org: :class:`numpy.ndarray`
                the original image tensor.
            y: :class:`int`
                the 1-based true label.
            rng: :class:`numpy.random.Generator`
                the random stream of this image.

            Returns
            -------
            trace: :class:`AttackTrace`
                the run's trace, ``x_best`` always set.
        """

        x_org = as_image_tensor(x_org)
        if model.input_shape is not None and tuple(model.input_shape) != x_org.shape:
            raise ShapeError(f"model expects {tuple(model.input_shape)}, image is {x_org.shape}")

        trace = AttackTrace(attack=self.name, label=y)
        start = time.perf_counter()
        try:
            self.search(model, x_org, y, rng, trace)
        except ModelError as error:
            logger.warning(f"{self.name}: model failure after {trace.queries} queries: {error}")
            trace.error = str(error)

        if trace.best_state is None:
            trace.best_state = self.initial_state(x_org.shape)
        trace.x_best = trace.best_state.apply(x_org)
        trace.total_seconds = time.perf_counter() - start
        return trace

    def search(self, model, x_org, y, rng, trace):
        raise NotImplementedError

    def initial_state(self, shape):
        return PerturbationState.filled(shape, self.eps)



    ### Helper Methods ###
    def query(self, model, x_org, state, y, trace):
        """
            Query the model once on ``project(x_org + perturbation)``.

            Returns
            -------
            result: :class:`tuple(float, numpy.ndarray), None`
                the loss and the probabilities, or ``None`` when the model returned
                non-finite probabilities (recorded as an anomaly).
        """

        x = state.apply(x_org)
        start = time.perf_counter()
        try:
            probs = np.asarray(model.predict(x), dtype=np.float64)
        finally:
            trace.query_seconds += time.perf_counter() - start
        trace.queries += 1

        if not np.all(np.isfinite(probs)):
            message = f"iteration {trace.iterations + 1}: non-finite probabilities"
            logger.warning(f"{self.name}: {message}")
            trace.anomalies.append(message)
            return None

        return self.loss_fn(probs, y), probs

    def consider(self, trace, state, result, allow_ties):
        """
            Record one iteration and keep ``state`` as the best one if its loss is
            at least (``allow_ties``) or strictly above the best loss. Return
            whether it was accepted.
        """

        t = trace.iterations + 1
        if result is None:
            accepted = False
            loss = math.nan
        else:
            loss, probs = result
            accepted = loss >= trace.best_loss if allow_ties else loss > trace.best_loss

        if accepted:
            trace.best_loss = loss
            trace.best_state = state
            trace.best_probs = probs
            if trace.first_success_iter is None and cw_loss(probs, trace.label) > 0:
                trace.first_success_iter = t

        trace.records.append(
            IterationRecord(t, loss, trace.best_loss, accepted, trace.queries)
        )
        logger.debug(f"{self.name} t={t} loss={loss:.6f} best={trace.best_loss:.6f} "
                     f"accepted={accepted}")
        return accepted

    def should_stop(self, trace):
        return self.early_stop and trace.success


class AttackRegistry:
    """
        Maps attack names (the ``attack`` key of an experiment configuration) to
        attack classes. Attack modules register themselves through ``setup``.
    """

    def __init__(self):
        self.attacks = {}

    def add_attack(self, attack_cls):
        if not attack_cls.name:
            raise ValueError(f"{attack_cls.__name__} has no name")
        self.attacks[attack_cls.name] = attack_cls

    def get_attack(self, name):
        attack_cls = self.attacks.get(name)
        if attack_cls is None:
            raise LookupError(
                f"No attack called '{name}'; available: {', '.join(sorted(self.attacks))}"
            )
        return attack_cls

    def names(self):
        return sorted(self.attacks)
