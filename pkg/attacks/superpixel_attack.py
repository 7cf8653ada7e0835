"""
    The Superpixel Attack: a greedy search over the corners of the L-infinity
    ball whose Update Areas are superpixels of the original image, refined by the
    segment ratio every time all areas of a level have been tried.
"""

import logging
import time
from dataclasses                import dataclass

import numpy as np

import settings
from attacks.base_attack        import BaseAttack, PerturbationState
from errors                     import AreaError, EmptyQueueError
from imgcore                    import as_image_tensor, to_rgb
from superpixel                 import SegmentCache, SegmentMap, SlicConfig, slic

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class UpdateArea:
    """
        The pixels whose perturbation is flipped in one iteration. ``channel`` is a
        0-based channel index, or ``None`` for every channel (the whole-image area
        of the first iteration). ``level`` and ``segment_id`` locate the area in
        the refinement schedule.
    """

    rows: np.ndarray
    cols: np.ndarray
    channel: object = None
    level: int = 0
    segment_id: int = 0

    @classmethod
    def whole_image(cls, height, width):
        return cls(np.repeat(np.arange(height), width), np.tile(np.arange(width), height))

    @property
    def pixel_count(self):
        return len(self.rows)

    def validate(self, shape):
        """
            Raises
            ------
            AreaError:
                the area is empty or reaches outside of an ``(H, W, C)`` tensor.
        """

        height, width, channels = shape
        if len(self.rows) == 0 or len(self.rows) != len(self.cols):
            raise AreaError("Update Area must hold at least one pixel")
        if (self.rows.min() < 0 or self.rows.max() >= height or
                self.cols.min() < 0 or self.cols.max() >= width):
            raise AreaError(f"Update Area pixels fall outside of a {height}x{width} image")
        if self.channel is not None and not 0 <= self.channel < channels:
            raise AreaError(f"channel {self.channel} is out of range 0..{channels - 1}")


@dataclass
class AreaQueue:
    """
        The Update Areas not yet tried at the current refinement level, the
        segment budget ``current_n`` they were built with and the level's
        segmentation.
    """

    pending: list
    current_n: int
    level: int = 0
    segmentation: SegmentMap = None

    @classmethod
    def initial(cls, height, width):
        return cls([UpdateArea.whole_image(height, width)], 1, 0,
                   SegmentMap(np.zeros((height, width), dtype=np.int64)))

    def __len__(self):
        return len(self.pending)



### Area Operations ###
def flip(state, area):
    """
        Return a new state whose signs are negated on the area's pixels (and
        channel), the given state is left untouched.

        Raises
        ------
        AreaError:
            the area does not fit the state's shape.
    """

    area.validate(state.shape)
    signs = state.signs.copy()
    if area.channel is None:
        signs[area.rows, area.cols, :] *= -1
    else:
        signs[area.rows, area.cols, area.channel] *= -1

    signs.setflags(write=False)
    return PerturbationState(state.eps, signs)

def next_area(queue, rng):
    """
        Remove one pending area uniformly at random and return it.

        Raises
        ------
        EmptyQueueError:
            nothing is pending, the queue must be refilled first.
    """

    if not queue.pending:
        raise EmptyQueueError("Update Area queue is empty")

    # Swap the drawn area with the last one so that removal is O(1)
    idx = int(rng.integers(len(queue.pending)))
    queue.pending[idx], queue.pending[-1] = queue.pending[-1], queue.pending[idx]
    return queue.pending.pop()

def refill(queue, img, r, slic_cfg=None, cache=None):
    """
        Move the queue to the next refinement level: multiply the segment budget
        by ``r`` (capped at ``H * W``), segment the original image and queue every
        superpixel once per channel.

        Parameters
        ----------
        queue: :class:`AreaQueue`
            an exhausted queue.
        img: :class:`numpy.ndarray`
            the original image tensor.
        r: :class:`int`
            the segment ratio.
        slic_cfg: :class:`superpixel.SlicConfig, optional`
            SLIC settings shared by every level.
        cache: :class:`superpixel.SegmentCache, optional`
            where segmentations are looked up and stored.

        Returns
        -------
        queue: :class:`AreaQueue`
            the refilled queue, holding ``segment_count * C`` areas.

        Raises
        ------
        EmptyQueueError:
            the queue still holds areas.
    """

    if queue.pending:
        raise EmptyQueueError(f"refill called with {len(queue.pending)} areas pending")
    if r < 2:
        raise ValueError("segment ratio must be at least 2")

    if slic_cfg is None:
        slic_cfg = SlicConfig()

    height, width, channels = img.shape
    n = min(queue.current_n * r, height * width)
    if n == height * width:
        seg = SegmentMap.singletons(height, width)
    else:
        rgb = to_rgb(img)
        params = slic_cfg.params(n)
        seg = cache.segment(rgb, params) if cache is not None else slic(rgb, params)

    level = queue.level + 1
    pending = [
        UpdateArea(rows, cols, channel, level, segment_id)
        for segment_id, (rows, cols) in enumerate(seg.segment_pixels())
        for channel in range(channels)
    ]

    logger.debug(f"refill level={level} n={n} segments={seg.segment_count}")
    return AreaQueue(pending, n, level, seg)



### Attack ###
class SuperpixelAttack(BaseAttack):
    """
        Versatile search over superpixel Update Areas. Every iteration flips one
        area of the best perturbation so far and keeps the flip when the loss does
        not decrease.
    """

    name = "superpixel"

    def __init__(self, eps=settings.EPSILON, iterations=settings.ITERATIONS, loss="cw",
                 early_stop=True, segment_ratio=settings.SEGMENT_RATIO,
                 alpha=settings.ALPHA, enforce_connectivity=settings.ENFORCE_CONNECTIVITY,
                 kmeans_iters=settings.KMEANS_ITERS, cache=None):
        super().__init__(eps, iterations, loss, early_stop)
        if segment_ratio < 2:
            raise ValueError("'segment_ratio' must be at least 2")

        self.segment_ratio = segment_ratio
        self.slic_cfg = SlicConfig(alpha, enforce_connectivity, kmeans_iters)
        self.cache = cache if cache is not None else SegmentCache()

    @classmethod
    def from_config(cls, config, cache=None):
        attack = super().from_config(config)
        if cache is not None:
            attack.cache = cache
        return attack

    def search(self, model, x_org, y, rng, trace):
        height, width, _ = x_org.shape
        queue = AreaQueue.initial(height, width)
        trace.schedule.append(queue.current_n)
        trace.segmentations.append(queue.segmentation)
        best = self.initial_state(x_org.shape)

        for _ in range(self.iterations):
            if self.should_stop(trace):
                break

            if not queue.pending:
                start = time.perf_counter()
                queue = refill(queue, x_org, self.segment_ratio, self.slic_cfg, self.cache)
                trace.seg_seconds += time.perf_counter() - start
                trace.schedule.append(queue.current_n)
                trace.segmentations.append(queue.segmentation)

            area = next_area(queue, rng)
            trace.used_areas.append((area.level, area.segment_id))

            candidate = flip(best, area)
            result = self.query(model, x_org, candidate, y, trace)
            if self.consider(trace, candidate, result, allow_ties=True):
                best = candidate


def versatile_search(model, x_org, y, eps=settings.EPSILON, T=settings.ITERATIONS,
                     r=settings.SEGMENT_RATIO, slic_cfg=None, rng=None, early_stop=True,
                     loss="cw", cache=None):
    """
        Run the Superpixel Attack on one image.

        Parameters
        ----------
        model: :class:`classifiers.base_classifier.BaseClassifier`
            the black-box classifier.
        x_org: :class:`numpy.ndarray`
            the original image tensor.
        y: :class:`int`
            the 1-based true label.
        eps: :class:`float, optional`
            the L-infinity budget.
        T: :class:`int, optional`
            the maximum number of iterations (one query each).
        r: :class:`int, optional`
            the segment ratio.
        slic_cfg: :class:`superpixel.SlicConfig, optional`
            SLIC settings used at every refinement level.
        rng: :class:`numpy.random.Generator, optional`
            the random stream; a generator seeded with ``settings.SEED`` if omitted.
        early_stop: :class:`bool, optional`
            whether to stop as soon as the best loss is positive.

        Returns
        -------
        trace: :class:`attacks.base_attack.AttackTrace`
            the run's trace.
    """

    if slic_cfg is None:
        slic_cfg = SlicConfig()
    if rng is None:
        rng = np.random.default_rng(settings.SEED)

    attack = SuperpixelAttack(eps, T, loss, early_stop, r, slic_cfg.alpha,
                              slic_cfg.enforce_connectivity, slic_cfg.kmeans_iters, cache)
    return attack.run(model, as_image_tensor(x_org), y, rng)


def setup(registry):
    registry.add_attack(SuperpixelAttack)
