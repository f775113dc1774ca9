"""Command-line surface: synth, validate, train, eval, infer.

Every command is a thin wrapper over a module operation. All randomness
flows from the config seed (or --seed override); identical inputs and seed
produce byte-identical outputs. Failures print a category-prefixed message
(CONFIG/FORMAT/COMPAT/VALIDATION) and exit nonzero.
"""

import argparse
import os
import sys

from . import feature_io, mapio, metrics, training
from .adapters import expected_geometry_hash, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_train_config
from .errors import AdheadError
from .head import infer


def _load_config(path, seed=None):
    if path is None:
        cfg = TrainConfig()
        if seed is not None:
            from dataclasses import replace
            cfg = replace(cfg, seed=seed)
        cfg.validate()
        return cfg
    overrides = {} if seed is None else {"seed": seed}
    return load_train_config(path, **overrides)


def cmd_synth(args):
    spec = (
        feature_io.load_synth_spec(args.spec)
        if args.spec else feature_io.SynthSpec()
    )
    manifest = feature_io.synth_dataset(spec, args.out)
    n_train = len(manifest.select("train"))
    n_test = len(manifest.select("test"))
    print(f"wrote {n_train} train / {n_test} test bundles to {args.out}")
    return 0


def cmd_validate(args):
    target = args.features
    if os.path.isdir(target):
        paths = sorted(
            os.path.join(target, name)
            for name in os.listdir(target)
            if name.endswith(".adft")
        )
    else:
        paths = [target]
    n_violations = 0
    for path in paths:
        bundle = feature_io.read_bundle(path)
        for violation in feature_io.validate_bundle(bundle):
            print(f"{path}: {violation}")
            n_violations += 1
    print(f"validated {len(paths)} bundle(s), {n_violations} violation(s)")
    return 0 if n_violations == 0 else 5


def cmd_train(args):
    cfg = _load_config(args.config, seed=args.seed)
    manifest = feature_io.read_manifest(args.manifest)
    bank = feature_io.read_textbank(args.textbank)
    log_lines = []
    stack, epoch_log = training.train(manifest, bank, cfg, log_lines=log_lines)
    save_checkpoint(stack, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")
    for rec in epoch_log:
        print(
            f"epoch {rec['epoch']}: total={rec['total']:.6f} "
            f"cm={rec['cm']:.6f} aacm={rec['aacm']:.6f}"
        )
    print(f"checkpoint written to {args.out}")
    return 0


def _load_stack_for(cfg, manifest, bank, ckpt_path, split):
    paths = manifest.paths(split)
    first = feature_io.read_bundle(paths[0])
    expected = expected_geometry_hash(cfg, first.d_v, bank.d_t)
    return load_checkpoint(ckpt_path, expected_hash=expected)


def cmd_eval(args):
    cfg = _load_config(args.config)
    manifest = feature_io.read_manifest(args.manifest)
    bank = feature_io.read_textbank(args.textbank)
    layers = tuple(args.layers) if args.layers else None
    if args.baseline:
        stack = None
    else:
        if not args.ckpt:
            raise AdheadError("--ckpt is required unless --baseline is given")
        stack = _load_stack_for(cfg, manifest, bank, args.ckpt, "test")
    report, scores, labels = metrics.evaluate(
        manifest, stack, bank, cfg, baseline=args.baseline, layers=layers,
        keep_pooled=True,
    )
    lines = report.kv_lines()
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    if args.figures:
        from .report import render_figures
        for path in render_figures(report, scores, labels, args.figures):
            print(f"figure written to {path}")
    return 0


def cmd_infer(args):
    cfg = _load_config(args.config)
    bundle = feature_io.read_bundle(args.bundle)
    bank = feature_io.read_textbank(args.textbank)
    expected = expected_geometry_hash(cfg, bundle.d_v, bank.d_t)
    stack = load_checkpoint(args.ckpt, expected_hash=expected)
    amap, _ = infer(bundle, stack, bank, cfg)
    mapio.write_pfm(amap, args.out_pfm)
    print(f"anomaly map written to {args.out_pfm}")
    if args.out_pgm:
        mapio.write_pgm(amap, args.out_pgm)
        print(f"preview written to {args.out_pgm}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adhead",
        description="Trainable zero-shot anomaly-detection head over frozen "
        "backbone features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature dataset")
    p.add_argument("--spec", help="synth spec file (key=value); defaults if omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="validate .adft feature bundles")
    p.add_argument("--features", required=True, help="bundle file or directory")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train the adapter stack")
    p.add_argument("--manifest", required=True)
    p.add_argument("--textbank", required=True)
    p.add_argument("--config", help="train config file (key=value)")
    p.add_argument("--out", required=True, help="output checkpoint (.adck)")
    p.add_argument("--log", help="per-step loss log file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--textbank", required=True)
    p.add_argument("--ckpt", help="checkpoint (.adck); unused with --baseline")
    p.add_argument("--config", help="train config file (key=value)")
    p.add_argument("--report", required=True, help="output key=value report file")
    p.add_argument("--baseline", action="store_true",
                   help="score the training-free normalized-token baseline")
    p.add_argument("--layers", type=int, nargs="+",
                   help="restrict fusion to these layers")
    p.add_argument("--figures", help="directory for rendered report figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run inference on one bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--textbank", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", help="train config file (key=value)")
    p.add_argument("--out-pfm", required=True, help="output float map (.pfm)")
    p.add_argument("--out-pgm", help="optional 8-bit preview (.pgm)")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AdheadError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"VALIDATION: missing file: {exc.filename}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
