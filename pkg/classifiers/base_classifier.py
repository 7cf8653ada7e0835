import logging
import threading

import numpy as np

from errors                     import ShapeError

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-5


def softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)

def on_simplex(probs, tol=SIMPLEX_TOLERANCE):
    probs = np.asarray(probs, dtype=np.float64)
    return bool(np.all(probs >= 0) and abs(np.sum(probs) - 1) <= tol)


class BaseClassifier:
    """
        A black-box classifier that only answers probability queries. Every call
        to ``predict`` counts as exactly one query, whichever thread makes it.
    """

    def __init__(self, input_shape=None, class_count=None):
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self.class_count = class_count
        self._query_count = 0
        self._count_lock = threading.Lock()

    @property
    def query_count(self):
        return self._query_count

    def predict(self, x):
        """
            Return the class probabilities of one image.

            Parameters
            ----------
            x: :class:`numpy.ndarray`
                an image tensor matching ``input_shape``.

            Returns
            -------
            probs: :class:`numpy.ndarray`
                a vector of length ``class_count``.

            Raises
            ------
            ShapeError:
                ``x`` does not match the input shape of the model.
            ModelError:
                the model could not answer.
        """

        x = np.asarray(x, dtype=np.float64)
        if self.input_shape is not None and x.shape != self.input_shape:
            raise ShapeError(f"model expects {self.input_shape}, got {x.shape}")

        with self._count_lock:
            self._query_count += 1

        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


class UniformClassifier(BaseClassifier):
    """Answers ``(1/Y, ..., 1/Y)`` for every image."""

    def __init__(self, class_count, input_shape=None):
        if class_count < 2:
            raise ValueError("'class_count' must be at least 2")
        super().__init__(input_shape, class_count)

    def forward(self, x):
        return np.full(self.class_count, 1 / self.class_count)
