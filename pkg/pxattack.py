import argparse
import dataclasses
import importlib
import json
import logging
import os
import sys
import traceback

import settings
from attacks.base_attack        import AttackRegistry
from classifiers.model_server   import add_arguments, serve
from errors                     import PxAttackError
from experiments.analysis       import area_analysis, compare_attacks, parse_alphas
from experiments.experiment     import load_config, run_experiment
from experiments.fixtures       import make_fixtures
from experiments.report         import emit_report
from imgcore                    import load_png, srgb_to_lab, to_rgb
from superpixel                 import SegmentMap, SlicParams, compactness, icv, slic

logger = logging.getLogger("pxattack")

# Options whose values may start with a dash (negative alphas)
DASH_VALUE_OPTIONS = ("--alphas",)

# Every module under attacks/ registers its attack through setup(registry)
ATTACKS = [f"attacks.{filename[:-3]}" for filename in sorted(os.listdir(
               os.path.join(settings.BASE_DIR, "attacks")))
           if filename.endswith(".py") and filename not in ("base_attack.py", "linear_oracle.py")]

#########################################################################################

def load_attacks():
    registry = AttackRegistry()
    for module_name in ATTACKS:
        module = importlib.import_module(module_name)
        module.setup(registry)
    logger.debug(f"List of attacks: {registry.names()}")
    return registry



### Commands ###
def config_from_args(args):
    config = load_config(args.config)
    if args.jobs is not None:
        config = dataclasses.replace(config, jobs=args.jobs)
    return config

def cmd_run(args):
    config = config_from_args(args)
    report = run_experiment(config, load_attacks())
    emit_report(report, config.output_dir)
    for t, rate in report.checkpoint_rates().items():
        print(f"success rate @ {t}: {rate:.2f}%")

def cmd_area_analysis(args):
    connectivity = {"both": (True, False), "on": (True,), "off": (False,)}[args.connectivity]
    rows = area_analysis(config_from_args(args), load_attacks(), parse_alphas(args.alphas),
                         connectivity)
    for row in rows:
        print(f"alpha={row.alpha:g} connectivity={row.connectivity}: icv={row.icv:.4f} "
              f"co={row.co:.4f} success={row.success_rate:.2f}%")

def cmd_compare(args):
    registry = load_attacks()
    names = [name.strip() for name in args.attacks.split(",") if name.strip()]
    for name in names:
        registry.get_attack(name)

    reports = compare_attacks(config_from_args(args), registry, names)
    for name, report in reports.items():
        rates = ", ".join(f"@{t}: {rate:.2f}%" for t, rate in report.checkpoint_rates().items())
        print(f"{name}: {rates}")

def cmd_segment(args):
    img = to_rgb(load_png(args.image))
    params = SlicParams(args.n, args.alpha, not args.no_connectivity, args.iters)
    seg = slic(img, params)
    seg.save(args.out)
    print(f"{seg.segment_count} segments written to {args.out}")

def cmd_metrics(args):
    lab = srgb_to_lab(to_rgb(load_png(args.image)))
    seg = SegmentMap.load(args.seg)
    print(json.dumps({"icv": icv(lab, seg), "co": compactness(seg),
                      "segments": seg.segment_count}))

def cmd_make_fixtures(args):
    config_path = make_fixtures(args.out, args.count, args.size, args.classes, args.seed)
    print(f"Fixtures written, run them with: pxattack run --config {config_path}")

def cmd_serve(args):
    serve(args.model, args.uniform, args.http, args.host, args.crash_after)



def add_jobs_argument(parser):
    parser.add_argument("--jobs", type=int, default=None,
                        help="images attacked in parallel, overrides the config")

def build_parser():
    parser = argparse.ArgumentParser(
        prog="pxattack", description="Black-box L-infinity attacks with superpixel Update Areas"
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="attack a dataset and write a report")
    run.add_argument("--config", required=True)
    add_jobs_argument(run)
    run.set_defaults(func=cmd_run)

    analysis = commands.add_parser("area-analysis",
                                   help="ICV/CO of the used Update Areas per SLIC alpha")
    analysis.add_argument("--config", required=True)
    add_jobs_argument(analysis)
    analysis.add_argument("--alphas", default="-1000,-100,-10,-1,-0.1,0.1,1,10,100,1000")
    analysis.add_argument("--connectivity", choices=("both", "on", "off"), default="both")
    analysis.set_defaults(func=cmd_area_analysis)

    compare = commands.add_parser("compare", help="run several attacks on one dataset")
    compare.add_argument("--config", required=True)
    add_jobs_argument(compare)
    compare.add_argument("--attacks", default="superpixel,square,signhunter")
    compare.set_defaults(func=cmd_compare)

    segment = commands.add_parser("segment", help="segment a PNG image")
    segment.add_argument("--image", required=True)
    segment.add_argument("--n", type=int, required=True, help="maximum number of segments")
    segment.add_argument("--alpha", type=float, default=settings.ALPHA)
    segment.add_argument("--no-connectivity", action="store_true")
    segment.add_argument("--iters", type=int, default=settings.KMEANS_ITERS)
    segment.add_argument("--out", required=True)
    segment.set_defaults(func=cmd_segment)

    metrics = commands.add_parser("metrics", help="ICV and CO of a segmentation")
    metrics.add_argument("--image", required=True)
    metrics.add_argument("--seg", required=True)
    metrics.set_defaults(func=cmd_metrics)

    fixtures = commands.add_parser("make-fixtures", help="write a synthetic dataset")
    fixtures.add_argument("--out", required=True)
    fixtures.add_argument("--count", type=int, default=100)
    fixtures.add_argument("--size", type=int, default=32)
    fixtures.add_argument("--classes", type=int, default=10)
    fixtures.add_argument("--seed", type=int, default=settings.SEED)
    fixtures.set_defaults(func=cmd_make_fixtures)

    server = commands.add_parser("serve", help="reference model server")
    add_arguments(server)
    server.set_defaults(func=cmd_serve)

    return parser

def join_dash_values(argv):
    """
        Join ``--alphas -1000,...`` into ``--alphas=-1000,...`` so that argparse
        does not mistake a negative value for an option.
    """

    joined = []
    args = iter(argv)
    for arg in args:
        if arg in DASH_VALUE_OPTIONS:
            value = next(args, None)
            joined.append(arg if value is None else f"{arg}={value}")
        else:
            joined.append(arg)
    return joined

def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(join_dash_values(argv))

    # stdout may carry the model protocol (serve), so logs go to stderr
    logging.basicConfig(level=logging.DEBUG if args.verbose else settings.LOG_LEVEL,
                        stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    try:
        args.func(args)
    except (PxAttackError, LookupError, ValueError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2

    return 0


if __name__ == "__main__":
    sys.exit(main())
