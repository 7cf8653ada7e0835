"""
    SignHunter: flips chunks of a flattened sign vector along a binary division
    tree (whole vector, halves, quarters, ...) and keeps a flip only when the
    loss strictly improves.
"""

import logging
import math
from dataclasses                import dataclass

import numpy as np

import settings
from attacks.base_attack        import BaseAttack, PerturbationState

logger = logging.getLogger(__name__)


@dataclass
class SignState:
    """
        The current sign vector of length ``N = H * W * C`` and the cursor of the
        next chunk to flip: chunk ``index`` at ``depth`` covers
        ``[index * ceil(N / 2**depth), (index + 1) * ceil(N / 2**depth))``.
    """

    signs: np.ndarray
    depth: int = 0
    index: int = 0

    @property
    def size(self):
        return len(self.signs)

    @property
    def max_depth(self):
        return math.ceil(math.log2(self.size)) if self.size > 1 else 0

    def chunk(self):
        chunk_len = math.ceil(self.size / 2 ** self.depth)
        start = self.index * chunk_len
        return start, min(start + chunk_len, self.size)

    def advance(self):
        """Move the cursor to the next non-empty chunk, row-major over the tree."""

        while True:
            self.index += 1
            if self.index >= 2 ** self.depth:
                self.index = 0
                self.depth = 0 if self.depth >= self.max_depth else self.depth + 1
            if self.chunk()[0] < self.size:
                return


class SignHunter(BaseAttack):
    name = "signhunter"

    def search(self, model, x_org, y, rng, trace):
        state = SignState(np.ones(x_org.size, dtype=np.int8))

        for _ in range(self.iterations):
            if self.should_stop(trace):
                break

            start, end = state.chunk()
            signs = state.signs.copy()
            signs[start:end] *= -1
            candidate = PerturbationState.from_signs(signs.reshape(x_org.shape), self.eps)

            result = self.query(model, x_org, candidate, y, trace)
            if self.consider(trace, candidate, result, allow_ties=False):
                state.signs = signs
            state.advance()


def signhunter(model, x_org, y, eps=settings.EPSILON, T=settings.ITERATIONS, rng=None,
               early_stop=True, loss="cw"):
    if rng is None:
        rng = np.random.default_rng(settings.SEED)
    return SignHunter(eps, T, loss, early_stop).run(model, x_org, y, rng)


def setup(registry):
    registry.add_attack(SignHunter)
