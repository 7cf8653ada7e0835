"""
    Experiment configuration, dataset manifests and the seeded runner that
    attacks every image of a dataset.
"""

import logging
import math
import time
from concurrent.futures         import ThreadPoolExecutor
from dataclasses                import dataclass, field, replace
from os.path                    import abspath, dirname, isabs, join
from typing                     import List, Optional

import numpy as np

import settings
from attacks.base_attack        import cw_loss
from classifiers.external_model import connect_external
from classifiers.toy_model      import load_toy_model
from errors                     import ConfigError, ModelError
from imgcore                    import load_png, load_raw_tensor
from superpixel                 import SegmentCache
from utils                      import (create_progress_bar, dict_get_as_bool, dict_get_as_float,
                                        dict_get_as_int, dict_get_as_list, get_csv_rows,
                                        get_json_data)

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    attack: str
    dataset: str
    model: dict
    attack_params: dict = field(default_factory=dict)
    epsilon: float = settings.EPSILON
    iterations: int = settings.ITERATIONS
    seed: int = settings.SEED
    early_stop: bool = True
    output_dir: str = "results"
    checkpoints: tuple = ()
    jobs: int = settings.JOBS
    clean_query: bool = True
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("'epsilon' must be positive")
        if self.iterations < 1:
            raise ConfigError("'iterations' must be at least 1")
        if self.jobs < 1:
            raise ConfigError("'jobs' must be at least 1")
        if not any(key in self.model for key in ("toy", "external")):
            raise ConfigError("'model' needs a 'toy' weights path or an 'external' target")
        bad = [t for t in self.checkpoints if not 1 <= t <= self.iterations]
        if bad:
            raise ConfigError(f"checkpoints {bad} fall outside of 1..{self.iterations}")

    @property
    def is_external(self):
        return "external" in self.model

    @classmethod
    def from_dict(cls, data, base_dir="."):
        """
            Build a configuration from a version 1 JSON document. Relative paths are
            resolved against ``base_dir``; missing keys fall back to ``settings``.

            Raises
            ------
            ConfigError:
                unknown version, missing required keys or invalid values.
        """

        if not isinstance(data, dict) or not data:
            raise ConfigError("configuration must be a non-empty JSON object")
        if data.get("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported configuration version {data.get('version')!r}")

        for key in ("attack", "dataset", "model"):
            if key not in data:
                raise ConfigError(f"configuration has no '{key}'")

        model = data["model"]
        if not isinstance(model, dict):
            raise ConfigError("'model' must be an object")
        model = dict(model)
        for key in ("toy", "cwd"):
            if key in model:
                model[key] = _resolve(base_dir, model[key])

        attack_params = data.get("attack_params", {})
        if not isinstance(attack_params, dict):
            raise ConfigError("'attack_params' must be an object")

        iterations = dict_get_as_int(data, "iterations", settings.ITERATIONS)
        checkpoints = dict_get_as_list(data, "checkpoints", ())
        if not checkpoints:
            checkpoints = [t for t in settings.CHECKPOINTS if t <= iterations] or [iterations]

        cache_dir = data.get("cache_dir")
        return cls(
            attack=str(data["attack"]),
            dataset=_resolve(base_dir, data["dataset"]),
            model=model,
            attack_params=dict(attack_params),
            epsilon=dict_get_as_float(data, "epsilon", settings.EPSILON),
            iterations=iterations,
            seed=dict_get_as_int(data, "seed", settings.SEED),
            early_stop=dict_get_as_bool(data, "early_stop", True),
            output_dir=_resolve(base_dir, data.get("output_dir", "results")),
            checkpoints=tuple(sorted(int(t) for t in checkpoints)),
            jobs=dict_get_as_int(data, "jobs", settings.JOBS),
            clean_query=dict_get_as_bool(data, "clean_query", True),
            cache_dir=_resolve(base_dir, cache_dir) if cache_dir else None,
        )

    def with_attack(self, attack, **attack_params):
        return replace(self, attack=attack, attack_params=attack_params)

def _resolve(base_dir, path):
    return path if isabs(path) else abspath(join(base_dir, path))

def load_config(path):
    try:
        data = get_json_data(path)
    except OSError as error:
        raise ConfigError(f"Could not read '{path}': {error}") from error
    return ExperimentConfig.from_dict(data, dirname(abspath(path)))



### Datasets ###
@dataclass(frozen=True)
class DatasetEntry:
    image_id: int
    path: str
    label: int

def read_manifest(path):
    """
        Read a ``path,label`` CSV manifest with 1-based labels. Image paths are
        relative to the manifest's directory.

        Raises
        ------
        ConfigError:
            the manifest cannot be read or has invalid rows.
    """

    try:
        rows = get_csv_rows(path)
    except OSError as error:
        raise ConfigError(f"Could not read manifest '{path}': {error}") from error

    entries = []
    for idx, row in enumerate(rows):
        try:
            label = int(row["label"])
            image_path = row["path"]
        except (KeyError, TypeError, ValueError) as error:
            raise ConfigError(f"'{path}' row {idx + 2} is invalid: {row}") from error
        if label < 1:
            raise ConfigError(f"'{path}' row {idx + 2}: labels start at 1")
        entries.append(DatasetEntry(idx, _resolve(dirname(abspath(path)), image_path), label))

    return entries

def load_image(path):
    if path.endswith(".rtf"):
        return load_raw_tensor(path)
    return load_png(path)



### Models ###
def open_model(config):
    if config.is_external:
        model = config.model
        input_shape = model.get("input_shape")
        return connect_external(model["external"],
                                timeout=float(model.get("timeout", settings.EXTERNAL_TIMEOUT)),
                                input_shape=tuple(input_shape) if input_shape else None,
                                cwd=model.get("cwd"))
    return load_toy_model(config.model["toy"])



### Results ###
@dataclass
class ImageResult:
    image_id: int
    path: str
    label: int
    clean_correct: bool
    success: bool
    first_success_iter: Optional[int]
    final_loss: float
    queries: int
    error: Optional[str] = None
    anomalies: int = 0
    seg_seconds: float = 0.0
    query_seconds: float = 0.0
    total_seconds: float = 0.0
    trace: object = None


@dataclass
class Report:
    """
        The per-image results of one experiment, in image order, plus the run's
        wall-clock time.
    """

    config: ExperimentConfig
    results: List[ImageResult] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def image_count(self):
        return len(self.results)

    def success_rate(self, t):
        """Fraction of images whose first success happened at iteration ``t`` or before."""

        if not self.results:
            return 0.0
        hits = sum(1 for r in self.results
                   if r.first_success_iter is not None and r.first_success_iter <= t)
        return hits / len(self.results)

    def curve(self):
        return [(t, 100 * self.success_rate(t)) for t in range(self.config.iterations + 1)]

    def checkpoint_rates(self):
        return {t: 100 * self.success_rate(t) for t in self.config.checkpoints}

    def clean_accuracy(self):
        if not self.results:
            return 0.0
        return sum(r.clean_correct for r in self.results) / len(self.results)

    def timing(self):
        """Return disjoint wall-clock seconds spent segmenting, querying and elsewhere."""

        segmentation = sum(r.seg_seconds for r in self.results)
        model_query = sum(r.query_seconds for r in self.results)
        total = max(self.wall_seconds, sum(r.total_seconds for r in self.results))
        return {
            "segmentation": segmentation,
            "model_query": model_query,
            "other": max(total - segmentation - model_query, 0.0),
        }



### Runner ###
def image_rng(seed, image_id):
    return np.random.default_rng(seed ^ image_id)

def attack_image(attack, model, entry, img, config):
    """
        Attack one image and return its result row. Model failures are recorded in
        the row, never raised.
    """

    rng = image_rng(config.seed, entry.image_id)
    start = time.perf_counter()

    if config.clean_query:
        try:
            clean_start = time.perf_counter()
            probs = model.predict(img)
            clean_seconds = time.perf_counter() - clean_start
        except ModelError as error:
            logger.warning(f"image {entry.image_id}: clean query failed: {error}")
            return ImageResult(entry.image_id, entry.path, entry.label, False, False, None,
                               math.nan, 0, error=str(error),
                               total_seconds=time.perf_counter() - start)

        clean_loss = cw_loss(probs, entry.label)
        if clean_loss > 0:
            return ImageResult(entry.image_id, entry.path, entry.label, False, True, 0,
                               clean_loss, 0, query_seconds=clean_seconds,
                               total_seconds=time.perf_counter() - start)
    else:
        clean_seconds = 0.0

    trace = attack.run(model, img, entry.label, rng)
    final_loss = (cw_loss(trace.best_probs, entry.label)
                  if trace.best_probs is not None else math.nan)

    return ImageResult(
        entry.image_id, entry.path, entry.label, True, trace.success,
        trace.first_success_iter, final_loss, trace.queries,
        error=trace.error, anomalies=len(trace.anomalies),
        seg_seconds=trace.seg_seconds, query_seconds=trace.query_seconds + clean_seconds,
        total_seconds=time.perf_counter() - start, trace=trace,
    )

def run_experiment(config, registry, model=None, cache=None, keep_traces=False):
    """
        Attack every image of the configured dataset.

        Parameters
        ----------
        config: :class:`ExperimentConfig`
            the experiment configuration.
        registry: :class:`attacks.base_attack.AttackRegistry`
            where the configured attack is looked up.
        model: :class:`classifiers.base_classifier.BaseClassifier, optional`
            an already open classifier; opened (and closed) from the
            configuration if omitted.
        cache: :class:`superpixel.SegmentCache, optional`
            segmentation cache shared with other runs.
        keep_traces: :class:`bool, optional`
            whether result rows keep their attack traces.

        Returns
        -------
        report: :class:`Report`
            one result per image, in manifest order.

        Raises
        ------
        ConfigError:
            the attack is unknown or the manifest is invalid.
        ImageReadError:
            an image of the manifest cannot be read.
    """

    try:
        attack_cls = registry.get_attack(config.attack)
    except LookupError as error:
        raise ConfigError(str(error)) from error

    if cache is None:
        cache = SegmentCache(config.cache_dir)
    try:
        attack = attack_cls.from_config(config, cache=cache)
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid attack_params for '{config.attack}': {error}") from error

    entries = read_manifest(config.dataset)
    images = [load_image(entry.path) for entry in entries]

    owns_model = model is None
    if owns_model:
        model = open_model(config)

    # One outstanding request per external connection
    jobs = 1 if config.is_external else config.jobs
    report = Report(config)
    start = time.perf_counter()
    logger.info(f"Attacking {len(entries)} images with '{config.attack}' "
                f"(eps={config.epsilon:.6f}, T={config.iterations}, jobs={jobs})")

    try:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            rows = executor.map(
                lambda pair: attack_image(attack, model, pair[0], pair[1], config),
                zip(entries, images)
            )
            # map yields in submission order, so results stay in image order
            for done, result in enumerate(rows, start=1):
                if not keep_traces:
                    result.trace = None
                report.results.append(result)
                percentage, bar = create_progress_bar(done / len(entries))
                logger.info(f"{bar} {percentage}% image {result.image_id} "
                            f"success={result.success} queries={result.queries}")
    finally:
        if owns_model:
            model.close()

    report.wall_seconds = time.perf_counter() - start
    return report
