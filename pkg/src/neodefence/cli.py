"""Command-line interface.

Subcommands: ``gen-dataset``, ``calibrate``, ``defend``, ``evaluate``.
Exit codes: 0 ok, 1 usage error, 2 oracle failure, 3 missing reference data.
All outputs are seed-deterministic JSON/PNG files under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
from pathlib import Path

from . import defence, metrics, simlab
from .defence import CleanReference, DefenceConfig
from .errors import OracleError, StreamAborted
from .image_ops import Position
from .oracle import DEFAULT_TIMEOUT_S, SubprocessOracle

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ORACLE = 2
EXIT_MISSING_REFERENCE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_dims(text: str) -> tuple:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _parse_xy(text: str) -> tuple:
    try:
        x, y = text.split(",")
        return int(x), int(y)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None


def _oracle_timeout() -> float:
    ms = os.environ.get("NEO_ORACLE_TIMEOUT_MS")
    return float(ms) / 1000.0 if ms else DEFAULT_TIMEOUT_S


def _open_oracle(spec: str):
    """``simlab:<dir>`` loads the bundled simulated classifier; ``cmd:<line>``
    launches an external oracle over the neo-oracle/1 protocol."""
    if spec.startswith("simlab:"):
        classifier = simlab.load_classifier(spec[len("simlab:"):])
        return simlab.SimOracle(classifier)
    if spec.startswith("cmd:"):
        return SubprocessOracle(shlex.split(spec[len("cmd:"):]),
                                timeout_s=_oracle_timeout())
    raise ValueError(f"oracle spec must start with 'simlab:' or 'cmd:', got {spec!r}")


def _require_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    if getattr(args, "entropy", False):
        return int.from_bytes(os.urandom(4), "little")
    print("error: --seed is required (or pass --entropy for a random one)",
          file=sys.stderr)
    raise SystemExit(EXIT_USAGE)


def _load_reference(directory) -> CleanReference:
    images, manifest = simlab.load_dataset(directory)
    return CleanReference.from_images(images, [e.label for e in manifest.entries])


# ---------------------------------------------------------------------------


def cmd_gen_dataset(args) -> int:
    seed = _require_seed(args)
    w, h = args.dims
    images, manifest, prototypes = simlab.gen_dataset(
        num_classes=args.classes,
        images_per_class=args.per_class,
        dims=(w, h),
        channels=args.channels,
        noise=args.noise,
        seed=seed,
        split=args.split,
    )
    if args.stream_size is not None:
        images = images[: args.stream_size]
        manifest.entries = manifest.entries[: args.stream_size]

    colour = simlab.default_trigger_colour(args.channels)
    if args.trigger_pos is not None:
        tx, ty = args.trigger_pos
    else:
        tx = ty = min(w, h) - args.trigger_size - 2
    trigger = simlab.make_trigger(args.trigger, args.trigger_size, colour,
                                  Position(tx, ty))
    frac = trigger.area_fraction(w, h)
    if frac > simlab.MAX_TRIGGER_AREA_FRACTION:
        print(f"error: trigger covers {frac:.1%} of the image; localized "
              f"triggers are bounded at {simlab.MAX_TRIGGER_AREA_FRACTION:.0%} "
              f"of the area", file=sys.stderr)
        return EXIT_USAGE

    if args.poison_fraction > 0:
        images, manifest = simlab.poison_dataset(
            images, manifest, trigger, args.target, args.poison_fraction,
            seed=seed, exclude_target=not args.poison_include_target,
        )

    out = Path(args.out)
    simlab.save_dataset(images, manifest, out)
    classifier = simlab.SimClassifier(prototypes=prototypes, trigger=trigger,
                                      target=args.target)
    simlab.save_classifier(classifier, out)
    poisoned = sum(e.poisoned for e in manifest.entries)
    print(f"wrote {len(images)} images ({poisoned} poisoned) to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    seed = _require_seed(args)
    try:
        reference = _load_reference(args.reference)
    except FileNotFoundError as exc:
        print(f"error: reference data missing: {exc}", file=sys.stderr)
        return EXIT_MISSING_REFERENCE
    m, n = args.blocker
    try:
        oracle = _open_oracle(args.oracle)
    except (OracleError, OSError, ValueError) as exc:
        print(f"error: cannot open oracle: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    try:
        result = defence.choose_lambda(oracle, reference, m, n,
                                       trials=args.trials,
                                       samples_per_trial=args.samples,
                                       seed=seed)
    except OracleError as exc:
        print(f"error: oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    finally:
        oracle.close()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibration.json").write_text(
        json.dumps(result.to_dict(), indent=2) + "\n"
    )
    print(f"R_av = {result.r_av:.4f}")
    if result.interval:
        lo, hi = result.interval
        print(f"recommended lambda interval: ({lo:.4f}, {hi:.4f}), "
              f"midpoint {result.recommended:.4f}")
    else:
        print(f"warning: {result.warning}")
    return EXIT_OK


def cmd_defend(args) -> int:
    seed = _require_seed(args)
    try:
        images, manifest = simlab.load_dataset(args.input)
    except FileNotFoundError as exc:
        print(f"error: input dataset missing: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        reference = _load_reference(args.reference)
    except (FileNotFoundError, TypeError) as exc:
        print(f"error: clean reference data missing: {exc}", file=sys.stderr)
        return EXIT_MISSING_REFERENCE

    m, n = args.blocker if args.blocker else (0, 0)
    config = DefenceConfig(
        blocker_w=m, blocker_h=n,
        trials=args.n, lambda_t=getattr(args, "lambda"),
        check_size=args.k, kmeans_seed=seed, search_seed=seed,
        fast_confirm=args.fast_confirm,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"

    try:
        oracle = _open_oracle(args.oracle)
    except (OracleError, OSError, ValueError) as exc:
        print(f"error: cannot open oracle: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    try:
        report = defence.defend(oracle, images, config, reference,
                                image_ids=[e.file for e in manifest.entries])
    except StreamAborted as exc:
        exc.report.write_json(report_path)  # partial progress is never lost
        print(f"error: {exc}", file=sys.stderr)
        print(f"partial report written to {report_path}", file=sys.stderr)
        return EXIT_ORACLE
    finally:
        oracle.close()

    report.write_json(report_path)
    if report.reconstruction is not None:
        defence.export_reconstruction(report.reconstruction, out / "reconstruction")
    s = report.summary()
    print(f"{s['total']} images: {s['backdoored']} backdoored, "
          f"{s['suspected_then_cleared']} cleared, {s['clean']} clean")
    print(f"report written to {report_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = json.loads(Path(args.report).read_text())
    manifest = simlab.DatasetManifest.from_dict(
        json.loads(Path(args.manifest).read_text())
    )
    verdicts = [
        defence.Verdict(
            image_id=v["id"], status=v["status"],
            original_label=v["original_label"],
            sanitized_label=v["sanitized_label"],
        )
        for v in report["verdicts"]
    ]
    by_id = {e.file: e for e in manifest.entries}
    missing = [v.image_id for v in verdicts if v.image_id not in by_id]
    if missing:
        print(f"error: report and manifest disagree on ids: {missing[:5]}",
              file=sys.stderr)
        return EXIT_USAGE

    stages = metrics.confusion(verdicts, manifest)
    labels_bd = [v.original_label for v in verdicts]
    labels_fix = [v.sanitized_label for v in verdicts]
    if args.clean_labels:
        labels_clean = json.loads(Path(args.clean_labels).read_text())
        if len(labels_clean) != len(verdicts):
            print("error: clean label file length does not match report",
                  file=sys.stderr)
            return EXIT_USAGE
    else:
        # fall back to ground-truth labels as the clean predictions
        labels_clean = [by_id[v.image_id].label for v in verdicts]
    rows = metrics.mitigation_report(labels_bd, labels_fix, labels_clean,
                                     mode=args.mode)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "confusion": {stage: c.to_dict() for stage, c in stages.items()},
        "mitigation": [r.to_dict() for r in rows],
        "mode": args.mode,
    }
    (out / "evaluation.json").write_text(json.dumps(payload, indent=2) + "\n")
    table = metrics.render_tables(stages, rows)
    (out / "evaluation.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="neo-defence",
                     description="Blackbox backdoor detection and mitigation "
                                 "for image classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (required unless --entropy)")
        p.add_argument("--entropy", action="store_true",
                       help="draw a random seed instead of requiring --seed")

    g = sub.add_parser("gen-dataset", help="generate a simulated dataset")
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--dims", type=_parse_dims, default=(32, 32), metavar="WxH")
    g.add_argument("--channels", type=int, choices=(1, 3), default=3)
    g.add_argument("--noise", type=int, default=simlab.DEFAULT_NOISE)
    g.add_argument("--stream-size", type=int, default=None,
                   help="truncate the stream to this many images")
    g.add_argument("--split", type=int, default=0,
                   help="noise split over the same prototypes; use a distinct "
                        "split for a held-out clean reference set")
    g.add_argument("--poison-fraction", type=float, default=0.10)
    g.add_argument("--poison-include-target", action="store_true",
                   help="also poison images whose true label is the target")
    g.add_argument("--trigger", choices=sorted(simlab._BUILDERS), default="square")
    g.add_argument("--trigger-size", type=int, default=4)
    g.add_argument("--trigger-pos", type=_parse_xy, default=None, metavar="X,Y")
    g.add_argument("--target", type=int, default=0)
    g.add_argument("--out", required=True)
    add_common(g)
    g.set_defaults(fn=cmd_gen_dataset)

    c = sub.add_parser("calibrate", help="measure the baseline flip rate R_av")
    c.add_argument("--oracle", required=True,
                   help="'simlab:<dir>' or 'cmd:<command line>'")
    c.add_argument("--reference", required=True,
                   help="directory of clean reference images + manifest.json")
    c.add_argument("--blocker", type=_parse_dims, required=True, metavar="WxH")
    c.add_argument("--trials", type=int, default=10)
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--out", required=True)
    add_common(c)
    c.set_defaults(fn=cmd_calibrate)

    d = sub.add_parser("defend", help="run the defence over an image stream")
    d.add_argument("--oracle", required=True)
    d.add_argument("--input", required=True, help="dataset directory to defend")
    d.add_argument("--reference", required=True)
    d.add_argument("--blocker", type=_parse_dims, default=None, metavar="WxH")
    d.add_argument("--lambda", type=float, default=0.8, dest="lambda")
    d.add_argument("--n", type=int, default=defence.DEFAULT_TRIALS,
                   help="random placements per searched image")
    d.add_argument("--k", type=int, default=defence.DEFAULT_CHECK_SIZE,
                   help="confirmation check-set size")
    d.add_argument("--jobs", type=int, default=1,
                   help="parallel oracle queries during search (queries are "
                        "batched; output is seed-deterministic regardless)")
    d.add_argument("--fast-confirm", action="store_true",
                   help="trust the first confirmation instead of re-confirming "
                        "every transitioning image")
    d.add_argument("--out", required=True)
    add_common(d)
    d.set_defaults(fn=cmd_defend)

    e = sub.add_parser("evaluate", help="score a defence report against ground truth")
    e.add_argument("--report", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--clean-labels", default=None,
                   help="JSON list of the oracle's predictions on the clean "
                        "versions; defaults to manifest ground truth")
    e.add_argument("--mode", choices=("per-class", "pairs"), default="per-class")
    e.add_argument("--out", required=True)
    add_common(e)
    e.set_defaults(fn=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except OracleError as exc:
        print(f"error: oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
