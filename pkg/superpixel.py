"""
    Superpixels: a SLIC variant with a signed spatial weight, connectivity
    post-processing, and the ICV / CO segmentation metrics.

    Pixel ``(r, c)`` sits at the continuous position ``(r + 0.5, c + 0.5)``; seed
    centers and cluster positions live in the same frame.
"""

import hashlib
import logging
import math
import threading
from dataclasses                import dataclass
from os                         import makedirs
from os.path                    import exists, join

import numpy as np
from scipy                      import ndimage

import settings
from errors                     import ShapeError, TensorFormatError
from imgcore                    import read_rtf, srgb_to_lab, write_rtf

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SlicParams:
    max_segments: int
    alpha: float = settings.ALPHA
    enforce_connectivity: bool = settings.ENFORCE_CONNECTIVITY
    kmeans_iters: int = settings.KMEANS_ITERS

    def __post_init__(self):
        if self.max_segments < 1:
            raise ValueError("'max_segments' must be at least 1")
        if self.kmeans_iters < 1:
            raise ValueError("'kmeans_iters' must be at least 1")


class SegmentMap:
    """
        A partition of the image plane into segments with contiguous ids
        ``0 .. segment_count - 1``. Instances are immutable.
    """

    def __init__(self, labels):
        labels = np.asarray(labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise ShapeError(f"segment labels must have shape (H, W), got {labels.shape}")

        # Compact ids, keeping the relative order of the given ids
        used, inverse = np.unique(labels, return_inverse=True)
        self.labels = inverse.reshape(labels.shape).astype(np.int64)
        self.labels.setflags(write=False)
        self.segment_count = len(used)
        self._pixels = None

    @classmethod
    def singletons(cls, height, width):
        return cls(np.arange(height * width).reshape(height, width))

    @property
    def shape(self):
        return self.labels.shape

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def sizes(self):
        return np.bincount(self.labels.ravel(), minlength=self.segment_count)

    def segment_pixels(self):
        """
            Return, for every segment id in order, the ``(rows, cols)`` index arrays
            of its pixels (raster order).

            Returns
            -------
            pixels: :class:`list[tuple(numpy.ndarray, numpy.ndarray)]`
                one entry per segment.
        """

        if self._pixels is None:
            flat = self.labels.ravel()
            order = np.argsort(flat, kind="stable")
            groups = np.split(order, np.cumsum(self.sizes())[:-1])
            self._pixels = [(g // self.width, g % self.width) for g in groups]

        return self._pixels

    def __eq__(self, other):
        if not isinstance(other, SegmentMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.shape, self.labels.tobytes()))

    def __repr__(self):
        return f"SegmentMap(shape={self.shape}, segment_count={self.segment_count})"

    ### Serialization ###
    def save(self, path):
        write_rtf(self.labels, path, dtype="i32")

    @classmethod
    def load(cls, path):
        array, dtype = read_rtf(path)
        if dtype != "i32" or array.ndim != 2:
            raise TensorFormatError(
                f"'{path}' is not a segment map (dtype {dtype}, shape {array.shape})"
            )
        return cls(array)



### Seeding ###
def seed_grid(height, width, n):
    """
        Return the seed centers SLIC places for a budget of ``n`` segments: a grid
        of ``ceil(sqrt(n * H / W))`` rows and ``ceil(n / rows)`` columns with one
        seed at the midpoint of every cell, thinned to exactly ``n`` seeds.

        Parameters
        ----------
        height: :class:`int`
            image height ``H``.
        width: :class:`int`
            image width ``W``.
        n: :class:`int`
            the maximum number of segments.

        Returns
        -------
        seeds: :class:`list[tuple(float, float)]`
            ``(row, col)`` centers in row-major order.

        Raises
        ------
        ValueError:
            ``n`` is not within ``1 .. H * W``.
    """

    if not 1 <= n <= height * width:
        raise ValueError(f"'n' must be between 1 and {height * width}, got {n}")

    rows = min(max(math.ceil(math.sqrt(n * height / width)), 1), height)
    cols = min(max(math.ceil(n / rows), 1), width)
    step_r = height / rows
    step_c = width / cols

    grid = [((i + 0.5) * step_r, (j + 0.5) * step_c)
            for i in range(rows) for j in range(cols)]
    # rows * cols >= n, surplus seeds are dropped at even strides
    return [grid[k * len(grid) // n] for k in range(n)]

def grid_interval(height, width, n):
    return math.sqrt(height * width / n)

def default_min_size(height, width, n):
    return math.ceil(grid_interval(height, width, n) ** 2 / 4)



### SLIC ###
def slic(img, params):
    """
        Segment an sRGB image tensor with localized k-means over LAB color and
        position. The dissimilarity of a pixel and a cluster is
        ``max(0, k_color + alpha * k_space)`` with euclidean LAB and positional
        distances; ties go to the smallest cluster id.

        Parameters
        ----------
        img: :class:`numpy.ndarray`
            an image tensor with ``C = 3``.
        params: :class:`SlicParams`
            segment budget, spatial weight, connectivity and iteration count.

        Returns
        -------
        seg: :class:`SegmentMap`
            the segmentation, empty clusters removed.

        Raises
        ------
        ShapeError:
            ``img`` does not have 3 channels.
        ValueError:
            ``params.max_segments`` exceeds the number of pixels.
    """

    lab = srgb_to_lab(img)
    height, width = lab.shape[:2]
    n = params.max_segments

    centers = np.array(seed_grid(height, width, n), dtype=np.float64)
    interval = grid_interval(height, width, n)
    seed_px = np.minimum(centers.astype(np.int64), [height - 1, width - 1])
    colors = lab[seed_px[:, 0], seed_px[:, 1]].copy()

    row_pos = np.arange(height, dtype=np.float64) + 0.5
    col_pos = np.arange(width, dtype=np.float64) + 0.5
    flat_lab = lab.reshape(-1, 3)
    flat_rows = np.repeat(row_pos, width)
    flat_cols = np.tile(col_pos, height)
    k = len(centers)

    for _ in range(params.kmeans_iters):
        labels = _assign_pixels(lab, centers, colors, params.alpha, interval,
                                row_pos, col_pos)

        ids = labels.ravel()
        counts = np.bincount(ids, minlength=k)
        filled = counts > 0
        centers[filled, 0] = np.bincount(ids, flat_rows, k)[filled] / counts[filled]
        centers[filled, 1] = np.bincount(ids, flat_cols, k)[filled] / counts[filled]
        for channel in range(3):
            sums = np.bincount(ids, flat_lab[:, channel], k)
            colors[filled, channel] = sums[filled] / counts[filled]

    seg = SegmentMap(labels)
    if params.enforce_connectivity:
        seg = enforce_connectivity(seg, default_min_size(height, width, n))

    logger.debug(f"slic n={n} alpha={params.alpha} -> {seg.segment_count} segments")
    return seg

def _assign_pixels(lab, centers, colors, alpha, interval, row_pos, col_pos):
    height, width = lab.shape[:2]
    best = np.full((height, width), np.inf)
    labels = np.full((height, width), -1, dtype=np.int64)

    # Each cluster competes for the pixels whose 2S x 2S window holds its center
    for idx in range(len(centers)):
        cr, cc = centers[idx]
        r0 = max(math.ceil(cr - interval - 0.5), 0)
        r1 = min(math.floor(cr + interval - 0.5), height - 1)
        c0 = max(math.ceil(cc - interval - 0.5), 0)
        c1 = min(math.floor(cc + interval - 0.5), width - 1)
        if r0 > r1 or c0 > c1:
            continue

        sub = lab[r0:r1 + 1, c0:c1 + 1]
        k_color = np.sqrt(np.sum((sub - colors[idx]) ** 2, axis=-1))
        k_space = np.sqrt((row_pos[r0:r1 + 1, None] - cr) ** 2 +
                          (col_pos[None, c0:c1 + 1] - cc) ** 2)
        dist = np.maximum(0.0, k_color + alpha * k_space)

        region = best[r0:r1 + 1, c0:c1 + 1]
        update = dist < region
        region[update] = dist[update]
        labels[r0:r1 + 1, c0:c1 + 1][update] = idx

    orphans = np.nonzero(labels < 0)
    if len(orphans[0]):
        d_rows = row_pos[orphans[0], None] - centers[None, :, 0]
        d_cols = col_pos[orphans[1], None] - centers[None, :, 1]
        labels[orphans] = np.argmin(d_rows ** 2 + d_cols ** 2, axis=1)

    return labels



### Connectivity ###
def enforce_connectivity(seg, min_size):
    """
        Split every segment into its 4-connected components, merge components
        smaller than ``min_size`` into the adjacent component sharing the longest
        boundary (ties go to the smallest segment id), and give every remaining
        component its own id.

        Parameters
        ----------
        seg: :class:`SegmentMap`
            the segmentation to clean up.
        min_size: :class:`int`
            the minimum number of pixels a component keeps its identity with.

        Returns
        -------
        seg: :class:`SegmentMap`
            a segmentation whose segments are all 4-connected.
    """

    labels = seg.labels
    height, width = labels.shape
    comp = np.full(labels.shape, -1, dtype=np.int64)
    comp_segment = []

    for segment_id, box in enumerate(ndimage.find_objects(labels + 1)):
        if box is None:
            continue
        mask = labels[box] == segment_id
        parts, num = ndimage.label(mask, structure=FOUR_CONNECTED)
        comp[box][mask] = parts[mask] - 1 + len(comp_segment)
        comp_segment.extend([segment_id] * num)

    comp_segment = np.array(comp_segment, dtype=np.int64)
    flat = comp.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=len(comp_segment))
    members = np.split(order, np.cumsum(counts)[:-1])
    sizes = counts.copy()

    for c in range(len(comp_segment)):
        if sizes[c] == 0 or sizes[c] >= min_size:
            continue

        neighbours = _neighbour_components(comp, members[c], c, height, width)
        if len(neighbours) == 0:
            continue

        ids, shared = np.unique(neighbours, return_counts=True)
        # Longest shared boundary, then smallest segment id, then smallest component
        target = ids[np.lexsort((ids, comp_segment[ids], -shared))[0]]

        flat[members[c]] = target
        members[target] = np.concatenate([members[target], members[c]])
        members[c] = members[c][:0]
        sizes[target] += sizes[c]
        sizes[c] = 0

    return SegmentMap(comp)

def _neighbour_components(comp, pixels, c, height, width):
    rows, cols = pixels // width, pixels % width
    found = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = rows + dr, cols + dc
        inside = (nr >= 0) & (nr < height) & (nc >= 0) & (nc < width)
        other = comp[nr[inside], nc[inside]]
        found.append(other[other != c])

    return np.concatenate(found)



### Metrics ###
def _check_shapes(lab, seg):
    if lab.ndim != 3 or lab.shape[:2] != seg.shape:
        raise ShapeError(f"LAB tensor {lab.shape} does not match segment map {seg.shape}")

def icv_terms(lab, seg):
    """
        Return the per-segment color dispersion ``sqrt(sum ||I(p) - mu(s)||^2) / |s|``.
    """

    _check_shapes(lab, seg)
    k = seg.segment_count
    ids = seg.labels.ravel()
    flat = lab.reshape(-1, lab.shape[2])
    counts = np.bincount(ids, minlength=k).astype(np.float64)

    means = np.stack([np.bincount(ids, flat[:, ch], k) for ch in range(flat.shape[1])],
                     axis=1) / counts[:, None]
    squares = np.sum((flat - means[ids]) ** 2, axis=1)
    return np.sqrt(np.bincount(ids, squares, k)) / counts

def icv(lab, seg):
    """
        Return the intra-cluster variation of ``seg`` on a LAB tensor: the mean
        over segments of the per-segment color dispersion. Lower values mean
        more color-homogeneous segments.

        Raises
        ------
        ShapeError:
            the shapes of ``lab`` and ``seg`` do not match.
    """

    return float(np.mean(icv_terms(lab, seg)))

def boundary_mask(seg):
    """
        Return a boolean map of the pixels having at least one 4-neighbor in another
        segment; the image border counts as outside.
    """

    padded = np.pad(seg.labels, 1, constant_values=-1)
    center = padded[1:-1, 1:-1]
    return ((padded[:-2, 1:-1] != center) | (padded[2:, 1:-1] != center) |
            (padded[1:-1, :-2] != center) | (padded[1:-1, 2:] != center))

def compactness_terms(seg):
    """
        Return the isoperimetric quotient ``Q(s) = 4 pi |s| / |R(s)|^2`` and the size
        ``|s|`` of every segment.
    """

    ids = seg.labels.ravel()
    k = seg.segment_count
    sizes = np.bincount(ids, minlength=k).astype(np.float64)
    perimeter = np.bincount(ids, boundary_mask(seg).ravel().astype(np.float64), k)
    return 4 * math.pi * sizes / perimeter ** 2, sizes

def compactness(seg):
    """
        Return the area-weighted compactness ``sum Q(s)|s| / sum |s|``. Higher
        values mean rounder, more centrally clustered segments.
    """

    quotients, sizes = compactness_terms(seg)
    return float(np.sum(quotients * sizes) / np.sum(sizes))

def area_metrics(lab, segmentations, used_areas):
    """
        Return ICV and CO over the Update Areas an attack actually used.

        Parameters
        ----------
        lab: :class:`numpy.ndarray`
            LAB tensor of the original image.
        segmentations: :class:`list[SegmentMap]`
            the segmentation of every refinement level.
        used_areas: :class:`Iterable[tuple(int, int)]`
            ``(level, segment id)`` of every extracted area; channel copies of a
            segment share its pixel set and therefore its metric values.

        Returns
        -------
        metrics: :class:`tuple(float, float)`
            ``(icv, co)``.

        Raises
        ------
        ValueError:
            ``used_areas`` is empty.
    """

    used = np.asarray(list(used_areas), dtype=np.int64).reshape(-1, 2)
    if len(used) == 0:
        raise ValueError("No Update Areas were used")

    icv_values = []
    weighted_q = []
    sizes = []
    for level, seg in enumerate(segmentations):
        segment_ids = used[used[:, 0] == level, 1]
        if len(segment_ids) == 0:
            continue
        quotients, seg_sizes = compactness_terms(seg)
        icv_values.append(icv_terms(lab, seg)[segment_ids])
        weighted_q.append(quotients[segment_ids] * seg_sizes[segment_ids])
        sizes.append(seg_sizes[segment_ids])

    icv_value = float(np.mean(np.concatenate(icv_values)))
    co_value = float(np.sum(np.concatenate(weighted_q)) / np.sum(np.concatenate(sizes)))
    return icv_value, co_value



### Caching ###
class SegmentCache:
    """
        Segmentations keyed by (image bytes, n, alpha, connectivity, iterations),
        optionally persisted as ``i32`` raw tensor files under ``cache_dir``.
    """

    def __init__(self, cache_dir=None):
        self.cache_dir = cache_dir
        self.entries = {}
        self.hits = 0
        self.lock = threading.Lock()

        if cache_dir is not None:
            makedirs(cache_dir, exist_ok=True)

    @staticmethod
    def make_key(img, params):
        digest = hashlib.sha1(np.ascontiguousarray(img).tobytes())
        digest.update(repr(img.shape).encode("ascii"))
        return (f"{digest.hexdigest()[:20]}_n{params.max_segments}_a{params.alpha!r}"
                f"_c{int(params.enforce_connectivity)}_i{params.kmeans_iters}")

    def segment(self, img, params):
        key = self.make_key(img, params)

        with self.lock:
            seg = self.entries.get(key)
            if seg is not None:
                self.hits += 1
                return seg

        path = join(self.cache_dir, f"{key}.rtf") if self.cache_dir else None
        if path is not None and exists(path):
            seg = SegmentMap.load(path)
        else:
            seg = slic(img, params)
            if path is not None:
                seg.save(path)

        with self.lock:
            self.entries[key] = seg
        return seg


@dataclass(frozen=True)
class SlicConfig:
    """The SLIC settings an attack reuses at every refinement level."""

    alpha: float = settings.ALPHA
    enforce_connectivity: bool = settings.ENFORCE_CONNECTIVITY
    kmeans_iters: int = settings.KMEANS_ITERS

    def params(self, n):
        return SlicParams(n, self.alpha, self.enforce_connectivity, self.kmeans_iters)
