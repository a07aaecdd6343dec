"""Command-line entry point: ``bayestn {train,eval,infer,check}``.

Every flag default can be overridden from the environment with the
``BAYESTN_`` prefix, e.g. ``BAYESTN_EPOCHS=5``; explicit flags win.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .bayes import DegenerateConditioningError, NormalizationError
from .check import FAULTS, CheckSpec, format_table, run_checks
from .data import DataFormatError, downsample, load_split, subsample
from .engine import TrainConfig, evaluate, train
from .inference import Query, run_query
from .network import FORMAT_VERSION, ModelFormatError, NetworkSpec, build_tree, load_model, save_model

log = logging.getLogger("bayestn")

ENV_PREFIX = "BAYESTN_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


@dataclass
class RunConfig:
    """Everything needed to reproduce a training run."""

    network: dict
    training: dict
    data_dir: str
    downsample: int = 1
    subsample: int = None
    out: str = None
    metrics: str = None
    model_format: str = FORMAT_VERSION
    version: str = __version__
    environment_overrides: dict = field(default_factory=dict)

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def _env_default(name, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"bad value {raw!r} for {ENV_PREFIX}{name.upper().replace('-', '_')}")


def _overrides():
    return {k: v for k, v in os.environ.items() if k.startswith(ENV_PREFIX)}


def _theta(text):
    """Accept ``atan:1e-3`` (learning rate tan theta) or a plain angle in radians."""
    if text.startswith("atan:"):
        return math.atan(float(text[5:]))
    return float(text)


def _add_train(sub):
    e = _env_default
    p = sub.add_parser("train", help="train a tree network on IDX data")
    data_dir = e("data_dir", None)
    p.add_argument("--data-dir", default=data_dir, required=data_dir is None)
    p.add_argument("--structure", choices=["btn1", "btn2"], default=e("structure", "btn1"))
    p.add_argument("--d", type=int, default=e("d", 2, int))
    p.add_argument("--chi", type=int, default=e("chi", 2, int))
    p.add_argument("--theta", type=_theta, default=e("theta", math.atan(1e-3), _theta),
                   help="rotation angle in radians, or atan:<lr>")
    p.add_argument("--epochs", type=int, default=e("epochs", 100, int))
    p.add_argument("--batch-size", type=int, default=e("batch_size", 100, int))
    p.add_argument("--seed", type=int, default=e("seed", 0, int))
    p.add_argument("--map", choices=["linear", "trig"], default=e("map", "trig"))
    p.add_argument("--optimizer", choices=["rotation", "adam-renorm"], default=e("optimizer", "rotation"))
    p.add_argument("--subsample", type=int, default=e("subsample", None, int),
                   help="train on a seeded subset of N samples")
    p.add_argument("--downsample", type=int, default=e("downsample", 1, int),
                   help="block-mean pooling factor, e.g. 2 for 14x14")
    p.add_argument("--out", default=e("out", "model.json"))
    p.add_argument("--metrics", default=e("metrics", "metrics.csv"))
    p.set_defaults(func=cmd_train)


def _add_eval(sub):
    p = sub.add_parser("eval", help="accuracy of a saved model on a data split")
    p.add_argument("--model", required=True)
    data_dir = _env_default("data_dir", None)
    p.add_argument("--data-dir", default=data_dir, required=data_dir is None)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--json", help="also write the result to this file")
    p.set_defaults(func=cmd_eval)


def _add_infer(sub):
    p = sub.add_parser("infer", help="answer a probabilistic query")
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True, help="JSON text or a path to a JSON file")
    p.set_defaults(func=cmd_infer)


def _add_check(sub):
    p = sub.add_parser("check", help="invariant and oracle suite on random small networks")
    p.add_argument("--spec", help="JSON object (or file) with CheckSpec fields")
    p.add_argument("--seed", type=int, default=_env_default("seed", None, int))
    p.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)


def build_parser():
    parser = _Parser(prog="bayestn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for add in (_add_train, _add_eval, _add_infer, _add_check):
        add(sub)
    return parser


def _prepare(ds, factor):
    if factor and factor > 1:
        ds = downsample(ds, factor)
    return ds


def cmd_train(args):
    try:
        spec = NetworkSpec(1, 1, d=args.d, chi=args.chi, fan_in=4 if args.structure == "btn1" else 2,
                           feature_map=args.map)
        config = TrainConfig(theta=args.theta, epochs=args.epochs, batch_size=args.batch_size,
                             seed=args.seed, optimizer=args.optimizer)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    for path in (args.out, args.metrics):
        parent = Path(path).resolve().parent
        if not parent.is_dir():
            raise UsageError(f"output directory does not exist: {parent}")
    train_ds = _prepare(load_split(args.data_dir, "train"), args.downsample)
    test_ds = _prepare(load_split(args.data_dir, "test"), args.downsample)
    train_ds = subsample(train_ds, args.subsample, args.seed)
    spec = NetworkSpec(train_ds.height, train_ds.width, d=spec.d, chi=spec.chi,
                       n_classes=train_ds.n_classes, fan_in=spec.fan_in, feature_map=spec.feature_map)
    run = RunConfig(asdict(spec), asdict(config), str(Path(args.data_dir).resolve()), args.downsample,
                    args.subsample, args.out, args.metrics, environment_overrides=_overrides())
    run.write(str(args.out) + ".run.json")
    net = build_tree(spec, seed=args.seed)
    log.info("training %s on %d samples (%dx%d)", args.structure, len(train_ds), spec.image_height,
             spec.image_width)
    best, metrics = train(net, train_ds, config, test_ds)
    save_model(best, args.out)
    metrics.to_csv(args.metrics)
    best_rec = max(metrics.records, key=lambda r: r.test_acc, default=None)
    if best_rec is not None:
        print(f"best test accuracy {best_rec.test_acc:.4f} at epoch {best_rec.epoch}")
    return EXIT_OK


def _match_resolution(ds, spec):
    if (ds.height, ds.width) == (spec.image_height, spec.image_width):
        return ds
    factor = ds.height // spec.image_height
    if factor > 1 and ds.height == factor * spec.image_height and ds.width == factor * spec.image_width:
        return downsample(ds, factor)
    raise DataFormatError(f"data is {ds.height}x{ds.width} but the model expects "
                          f"{spec.image_height}x{spec.image_width}")


def cmd_eval(args):
    net = load_model(args.model)
    ds = _match_resolution(load_split(args.data_dir, args.split), net.spec)
    acc = evaluate(net, ds)
    print(f"accuracy {acc:.6f}")
    if args.json:
        Path(args.json).write_text(json.dumps({"model": args.model, "split": args.split,
                                               "n": len(ds), "accuracy": acc}) + "\n")
    return EXIT_OK


def _load_json_arg(text):
    path = Path(text)
    if not text.lstrip().startswith(("{", "[")) and path.exists():
        text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"cannot parse JSON: {exc}") from exc


def cmd_infer(args):
    net = load_model(args.model)
    try:
        query = Query.from_dict(_load_json_arg(args.query))
    except (TypeError, KeyError) as exc:
        raise UsageError(f"malformed query: {exc}") from exc
    try:
        result = run_query(net, query)
    except (KeyError, IndexError) as exc:
        raise UsageError(f"query refers to an unknown set or event: {exc}") from exc
    print(json.dumps(result))
    return EXIT_OK


def cmd_check(args):
    fields = _load_json_arg(args.spec) if args.spec else {}
    if not isinstance(fields, dict):
        raise UsageError("--spec must be a JSON object")
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.inject_fault:
        fields["fault"] = args.inject_fault
    try:
        spec = CheckSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in fields.items()})
    except TypeError as exc:
        raise UsageError(f"bad check spec: {exc}") from exc
    results = run_checks(spec)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def main(argv=None):
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code
    except UsageError as exc:
        print(f"bayestn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bayestn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataFormatError, ModelFormatError) as exc:
        print(f"bayestn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, NormalizationError, DegenerateConditioningError) as exc:
        print(f"bayestn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"bayestn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
