"""
    L-infinity Square Attack: random square windows of shrinking size whose
    perturbation is redrawn per channel, starting from vertical stripes.
"""

import logging
import math
from dataclasses                import dataclass

import numpy as np

import settings
from attacks.base_attack        import BaseAttack, PerturbationState, project

logger = logging.getLogger(__name__)

# (iteration per 10000 of the budget, divisor of p_init) after which p shrinks
HALVING_SCHEDULE = (
    (10, 2), (50, 4), (200, 8), (500, 16), (1000, 32),
    (2000, 64), (4000, 128), (6000, 256), (8000, 512),
)

MAX_RESAMPLES = 100


@dataclass(frozen=True)
class SquareParams:
    p_init: float = settings.SQUARE_P_INIT
    schedule: tuple = HALVING_SCHEDULE

    def __post_init__(self):
        if not 0 < self.p_init <= 1:
            raise ValueError("'p_init' must lie in (0, 1]")

    def p_selection(self, it, budget):
        """
            Return the window area fraction at (0-based) iteration ``it`` out of
            ``budget``, the iteration being rescaled to a budget of 10000.
        """

        it = int(it / budget * 10000)
        divisor = 1
        for breakpoint, halving in self.schedule:
            if it > breakpoint:
                divisor = halving
        return self.p_init / divisor

def window_side(p, height, width):
    side = max(int(round(math.sqrt(p * height * width))), 1)
    return min(side, max(min(height, width) - 1, 1))


class SquareAttack(BaseAttack):
    name = "square"

    def __init__(self, eps=settings.EPSILON, iterations=settings.ITERATIONS, loss="cw",
                 early_stop=True, p_init=settings.SQUARE_P_INIT):
        super().__init__(eps, iterations, loss, early_stop)
        self.params = SquareParams(p_init)

    def search(self, model, x_org, y, rng, trace):
        height, width, channels = x_org.shape

        # Vertical stripes: one sign per (column, channel)
        stripes = rng.choice(np.array([-1, 1], dtype=np.int8), size=(1, width, channels))
        best = PerturbationState.from_signs(np.broadcast_to(stripes, x_org.shape), self.eps)
        trace.best_state = best

        result = self.query(model, x_org, best, y, trace)
        self.consider(trace, best, result, allow_ties=False)
        x_best = best.apply(x_org)
        saturated = False

        for it in range(1, self.iterations):
            if self.should_stop(trace):
                break

            # the schedule counts from 0 at the first window
            side = window_side(self.params.p_selection(it - 1, self.iterations), height, width)
            top = int(rng.integers(0, height - side + 1))
            left = int(rng.integers(0, width - side + 1))
            window = (slice(top, top + side), slice(left, left + side))

            signs = best.signs.copy()
            for _ in range(MAX_RESAMPLES):
                signs[window] = rng.choice(np.array([-1, 1], dtype=np.int8),
                                           size=(1, 1, channels))
                moved = project(x_org[window] + self.eps * signs[window])
                if not np.array_equal(moved, x_best[window]):
                    break
            else:
                if not saturated:
                    message = (f"iteration {it + 1}: window left unchanged after "
                               f"{MAX_RESAMPLES} draws")
                    logger.warning(f"{self.name}: {message}")
                    trace.anomalies.append(message)
                    saturated = True

            candidate = PerturbationState.from_signs(signs, self.eps)
            result = self.query(model, x_org, candidate, y, trace)
            if self.consider(trace, candidate, result, allow_ties=False):
                best = candidate
                x_best = best.apply(x_org)


def square_attack(model, x_org, y, eps=settings.EPSILON, T=settings.ITERATIONS,
                  params=None, rng=None, early_stop=True, loss="cw"):
    if params is None:
        params = SquareParams()
    if rng is None:
        rng = np.random.default_rng(settings.SEED)

    attack = SquareAttack(eps, T, loss, early_stop, params.p_init)
    attack.params = params
    return attack.run(model, x_org, y, rng)


def setup(registry):
    registry.add_attack(SquareAttack)
