import logging
import math
from os.path                    import join

from utils                      import (create_multi_graph, create_simple_graph, save_buffer,
                                        set_csv_rows, set_json_data)

logger = logging.getLogger(__name__)

PER_IMAGE_HEADER = ("image_id", "clean_correct", "success", "first_success_iter",
                    "final_loss", "queries")
CURVE_HEADER = ("iteration", "success_rate_percent")
TIMING_HEADER = ("phase", "seconds")


def _fmt_float(value):
    return "nan" if value is None or math.isnan(value) else repr(float(value))

def _fmt_bool(value):
    return "true" if value else "false"

def per_image_rows(report):
    return [
        (r.image_id, _fmt_bool(r.clean_correct), _fmt_bool(r.success),
         "" if r.first_success_iter is None else r.first_success_iter,
         _fmt_float(r.final_loss), r.queries)
        for r in report.results
    ]

def summarize(report):
    config = report.config
    results = report.results
    return {
        "attack": config.attack,
        "attack_params": config.attack_params,
        "epsilon": config.epsilon,
        "iterations": config.iterations,
        "seed": config.seed,
        "early_stop": config.early_stop,
        "images": report.image_count,
        "clean_query": config.clean_query,
        "clean_accuracy_percent": 100 * report.clean_accuracy(),
        "success_rate_percent": {str(t): rate for t, rate in report.checkpoint_rates().items()},
        "mean_queries": (sum(r.queries for r in results) / len(results)) if results else 0.0,
        "errors": sum(1 for r in results if r.error),
        "anomalies": sum(r.anomalies for r in results),
        "timing_seconds": report.timing(),
        "note": "clean queries are counted outside of the query budget and of 'queries'",
    }

def emit_report(report, out_dir):
    """
        Write ``summary.json``, ``per_image.csv``, ``curve.csv``, ``timing.csv`` and
        ``curve.png`` into ``out_dir``. A run without images produces header-only
        CSV files.

        Returns
        -------
        paths: :class:`dict`
            the written file paths, keyed by file name.
    """

    paths = {name: join(out_dir, name) for name in
             ("summary.json", "per_image.csv", "curve.csv", "timing.csv", "curve.png")}

    set_json_data(paths["summary.json"], summarize(report))
    set_csv_rows(paths["per_image.csv"], PER_IMAGE_HEADER, per_image_rows(report))

    curve = report.curve() if report.results else []
    set_csv_rows(paths["curve.csv"], CURVE_HEADER,
                 [(t, repr(float(rate))) for t, rate in curve])

    timing = report.timing()
    set_csv_rows(paths["timing.csv"], TIMING_HEADER,
                 [(phase, repr(float(seconds))) for phase, seconds in timing.items()])

    buf = create_simple_graph(
        f"{report.config.attack} (eps={report.config.epsilon:.4f})",
        [rate for _, rate in curve], ylim=(0, 100),
        xlabel="iteration", ylabel="success rate (%)"
    )
    save_buffer(buf, paths["curve.png"])

    logger.info(f"Report written to {out_dir}")
    return paths

def emit_comparison(reports, out_dir):
    """
        Write ``comparison.csv`` (attack, checkpoint, success rate) and
        ``comparison.png`` (one success-rate curve per attack).
    """

    rows = [
        (name, t, repr(float(rate)))
        for name, report in reports.items()
        for t, rate in report.checkpoint_rates().items()
    ]
    csv_path = join(out_dir, "comparison.csv")
    set_csv_rows(csv_path, ("attack", "checkpoint", "success_rate_percent"), rows)

    series = {name: [rate for _, rate in report.curve()] for name, report in reports.items()}
    png_path = join(out_dir, "comparison.png")
    save_buffer(create_multi_graph("Attack success rate", series, ylim=(0, 100),
                                   xlabel="iteration", ylabel="success rate (%)"), png_path)
    return csv_path, png_path
