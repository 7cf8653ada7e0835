"""
    Segmentation quality of the Update Areas an attack used (ICV and CO) next to
    its success rate over a grid of SLIC spatial weights, and side-by-side runs
    of several attacks on one dataset.
"""

import logging
import math
from dataclasses                import dataclass
from os.path                    import join

import numpy as np

from experiments.experiment     import load_image, read_manifest, run_experiment
from experiments.report         import emit_comparison, emit_report
from imgcore                    import srgb_to_lab, to_rgb
from superpixel                 import SegmentCache, area_metrics
from utils                      import create_scatter_graph, save_buffer, set_csv_rows

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (-1000, -100, -10, -1, -0.1, 0.1, 1, 10, 100, 1000)
AREA_HEADER = ("alpha", "connectivity", "icv", "co", "success_rate_percent")


@dataclass(frozen=True)
class AreaRow:
    alpha: float
    connectivity: bool
    icv: float
    co: float
    success_rate: float

    def as_csv(self):
        return (repr(float(self.alpha)), "true" if self.connectivity else "false",
                repr(self.icv), repr(self.co), repr(self.success_rate))


def parse_alphas(text):
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as error:
        raise ValueError(f"invalid alpha list '{text}'") from error

def trace_metrics(result, img):
    trace = result.trace
    if trace is None or not trace.used_areas:
        return None
    return area_metrics(srgb_to_lab(to_rgb(img)), trace.segmentations, trace.used_areas)

def area_analysis(config, registry, alphas=DEFAULT_ALPHAS, connectivity=(True, False),
                  model=None, images=None):
    """
        Run the Superpixel Attack once per ``(alpha, connectivity)`` setting and
        tabulate the mean ICV and CO of the Update Areas it used against its
        success rate at the iteration budget. Writes ``area_analysis.csv`` and
        ``area_analysis.png`` into the configured output directory.

        Parameters
        ----------
        config: :class:`experiments.experiment.ExperimentConfig`
            the base configuration; its attack is replaced by the Superpixel
            Attack with the setting's SLIC parameters.
        registry: :class:`attacks.base_attack.AttackRegistry`
            the attack registry.
        alphas: :class:`Iterable[float], optional`
            SLIC spatial weights to try.
        connectivity: :class:`Iterable[bool], optional`
            connectivity settings to try.

        Returns
        -------
        rows: :class:`list[AreaRow]`
            one row per setting, images never attacked (clean failures) are left
            out of the ICV and CO means.
    """

    if images is None:
        images = [load_image(entry.path) for entry in read_manifest(config.dataset)]

    cache = SegmentCache(config.cache_dir)
    base_params = dict(config.attack_params) if config.attack == "superpixel" else {}
    rows = []

    for alpha in alphas:
        for connected in connectivity:
            params = dict(base_params, alpha=alpha, enforce_connectivity=connected)
            run_config = config.with_attack("superpixel", **params)
            report = run_experiment(run_config, registry, model=model, cache=cache,
                                    keep_traces=True)

            metrics = [trace_metrics(result, images[result.image_id])
                       for result in report.results]
            metrics = [m for m in metrics if m is not None]
            icv = float(np.mean([m[0] for m in metrics])) if metrics else math.nan
            co = float(np.mean([m[1] for m in metrics])) if metrics else math.nan

            row = AreaRow(alpha, connected, icv, co,
                          100 * report.success_rate(config.iterations))
            logger.info(f"alpha={alpha} connectivity={connected}: icv={icv:.4f} "
                        f"co={co:.4f} success={row.success_rate:.1f}%")
            rows.append(row)

    set_csv_rows(join(config.output_dir, "area_analysis.csv"), AREA_HEADER,
                 [row.as_csv() for row in rows])
    buf = create_scatter_graph(
        "Update Area quality", [row.co for row in rows], [row.icv for row in rows],
        [f"a={row.alpha:g}{'' if row.connectivity else ' (unc.)'} {row.success_rate:.0f}%"
         for row in rows],
        xlabel="CO", ylabel="ICV"
    )
    save_buffer(buf, join(config.output_dir, "area_analysis.png"))
    return rows


def compare_attacks(config, registry, names, model=None):
    """
        Run every named attack on the configured dataset. The configured attack
        keeps its ``attack_params``, the others use their defaults. Each report is
        written to ``<output_dir>/<attack>/`` and the comparison next to them.

        Returns
        -------
        reports: :class:`dict`
            attack name to :class:`experiments.experiment.Report`.
    """

    cache = SegmentCache(config.cache_dir)
    reports = {}
    for name in names:
        params = config.attack_params if name == config.attack else {}
        run_config = config.with_attack(name, **params)
        reports[name] = run_experiment(run_config, registry, model=model, cache=cache)
        emit_report(reports[name], join(config.output_dir, name))

    emit_comparison(reports, config.output_dir)
    return reports
