"""Command-line entry point.

Subcommands: gen-data, pretrain, adapt, eval, verify. All outputs are
deterministic for fixed arguments, configuration, and seed; files carry no
timestamps, so reruns are byte-identical. Exit codes: 0 success, 1 usage
or validation error, 2 verification failure.

Seed precedence: --seed flag, then config file, then the SFDA2_SEED
environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .adapt import AdaptConfig, adapt, evaluate, pretrain_source, validate_config
from .data import (
    Dataset,
    ShiftSpec,
    _format_float,
    default_shift_spec,
    dumps_17g,
    gen_synthetic,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    validate_shift_spec,
)
from .errors import InvalidInputError, NumericalError
from .model import init_optimizer
from .verify import (
    verify_gradients,
    verify_ifa_bound,
    verify_oracles,
    verify_snc_factorization,
)

import numpy as np


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits the process with status 2 on bad flags; the contract
    # here is exit 1 for usage errors, so surface them as exceptions.
    def error(self, message):
        raise _UsageError(message)


def _resolve_seed(flag_value: int | None, config_value: int | None = None, default: int = 0) -> int:
    if flag_value is not None:
        return flag_value
    if config_value is not None:
        return config_value
    env = os.environ.get("SFDA2_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InvalidInputError("SFDA2_SEED must be an integer") from None
    return default


_CONFIG_SCHEMA: dict[str, type] = {
    "k": int,
    "alpha1": float,
    "alpha2": float,
    "beta": float,
    "lambda0": float,
    "lr": float,
    "momentum": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "bank_fraction": float,
    "hidden_dims": list,
    "feature_dim": int,
}


def _check_config_value(key: str, value):
    expected = _CONFIG_SCHEMA[key]
    if isinstance(value, bool):
        raise InvalidInputError(f"config field {key!r} must be a number, got a boolean")
    if expected is float:
        if not isinstance(value, (int, float)):
            raise InvalidInputError(f"config field {key!r} must be a number")
        return float(value)
    if expected is int:
        if not isinstance(value, int):
            raise InvalidInputError(f"config field {key!r} must be an integer")
        return value
    if key == "hidden_dims":
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in value
        ):
            raise InvalidInputError("config field 'hidden_dims' must be a list of integers >= 1")
        return tuple(value)
    raise InvalidInputError(f"unsupported config field {key!r}")


def _load_run_config(path: str | None, args) -> tuple[AdaptConfig, tuple[int, ...], int]:
    """Config file merged with flag overrides; every field is validated."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"unreadable config {path!r}: {exc}") from exc
        if not isinstance(raw, dict):
            raise InvalidInputError("config root must be a JSON object")
        for key, value in raw.items():
            if key not in _CONFIG_SCHEMA:
                raise InvalidInputError(f"unknown config field {key!r}")
            values[key] = _check_config_value(key, value)

    for flag in (
        "k", "alpha1", "alpha2", "beta", "lambda0", "lr", "momentum",
        "batch_size", "epochs", "bank_fraction", "feature_dim",
    ):
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[flag] = flag_value
    if getattr(args, "hidden_dims", None) is not None:
        values["hidden_dims"] = tuple(args.hidden_dims)

    hidden_dims = values.pop("hidden_dims", (16,))
    feature_dim = values.pop("feature_dim", 8)
    if feature_dim < 1:
        raise InvalidInputError("config field 'feature_dim' must be >= 1")
    seed = _resolve_seed(getattr(args, "seed", None), values.pop("seed", None))
    config = AdaptConfig(seed=seed, **values)
    validate_config(config)
    return config, tuple(hidden_dims), feature_dim


_SPEC_FIELDS = (
    "means",
    "covariances",
    "source_counts",
    "target_counts",
    "angle_degrees",
    "translation",
    "noise_scale",
)


def _load_shift_spec(path: str) -> ShiftSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"unreadable spec {path!r}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidInputError("spec root must be a JSON object")
    for key in raw:
        if key not in _SPEC_FIELDS:
            raise InvalidInputError(f"unknown spec field {key!r}")
    base = default_shift_spec()
    try:
        spec = ShiftSpec(
            means=np.asarray(raw.get("means", base.means), dtype=np.float64),
            covariances=np.asarray(raw.get("covariances", base.covariances), dtype=np.float64),
            source_counts=np.asarray(raw.get("source_counts", base.source_counts), dtype=np.int64),
            target_counts=np.asarray(raw.get("target_counts", base.target_counts), dtype=np.int64),
            angle_degrees=float(raw.get("angle_degrees", base.angle_degrees)),
            translation=np.asarray(raw.get("translation", base.translation), dtype=np.float64),
            noise_scale=float(raw.get("noise_scale", base.noise_scale)),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed spec value: {exc}") from exc
    validate_shift_spec(spec)
    return spec


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_losses_csv(path: str, trace) -> None:
    lines = ["iteration,snc,ifa,fd,total,decay,lambda"]
    for i, row in enumerate(trace.iterations):
        cells = [str(i)] + [
            _format_float(v) for v in (row.snc, row.ifa, row.fd, row.total, row.decay, row.lam)
        ]
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def _trace_payload(trace) -> dict:
    return {
        "iterations": [
            {
                "iteration": i,
                "snc": row.snc,
                "ifa": row.ifa,
                "fd": row.fd,
                "total": row.total,
                "decay": row.decay,
                "lambda": row.lam,
            }
            for i, row in enumerate(trace.iterations)
        ],
        "epoch_eval": [m.to_dict() for m in trace.epoch_metrics],
    }


def _cmd_gen_data(args) -> int:
    spec = _load_shift_spec(args.spec) if args.spec else default_shift_spec()
    seed = _resolve_seed(args.seed)
    source, target = gen_synthetic(spec, seed)
    os.makedirs(args.out, exist_ok=True)
    source_path = os.path.join(args.out, "source.csv")
    target_path = os.path.join(args.out, "target.csv")
    save_dataset(source, source_path)
    save_dataset(target, target_path)
    print(f"wrote {source_path} ({source.size} rows) and {target_path} ({target.size} rows)")
    return 0


def _cmd_pretrain(args) -> int:
    config, hidden_dims, feature_dim = _load_run_config(args.config, args)
    source = load_dataset(args.source)
    model = pretrain_source(config, source, hidden_dims, feature_dim)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "source.ckpt")
    save_checkpoint(model, init_optimizer(model, config.momentum, config.lr), ckpt_path)
    metrics = evaluate(model, source)
    _write_text(
        os.path.join(args.out, "metrics.json"),
        dumps_17g({"source_eval": metrics.to_dict()}) + "\n",
    )
    print(f"wrote {ckpt_path}; source accuracy {metrics.accuracy:.4f}")
    return 0


def _cmd_adapt(args) -> int:
    config, _, _ = _load_run_config(args.config, args)
    model, _ = load_checkpoint(args.model)
    target = load_dataset(args.target, n_classes=model.n_classes).unlabeled()
    eval_data = None
    if args.eval_data:
        eval_data = load_dataset(args.eval_data, n_classes=model.n_classes)
    adapted, trace = adapt(config, model, target, eval_data)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "adapted.ckpt")
    # Checkpoints store optimizer settings with fresh buffers; adaptation
    # momentum is not meant to be resumed across runs.
    save_checkpoint(adapted, init_optimizer(adapted, config.momentum, config.lr), ckpt_path)
    _write_losses_csv(os.path.join(args.out, "losses.csv"), trace)
    _write_text(os.path.join(args.out, "metrics.json"), dumps_17g(_trace_payload(trace)) + "\n")
    print(f"wrote {ckpt_path} after {len(trace.iterations)} iterations")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.model)
    dataset = load_dataset(args.data, n_classes=model.n_classes)
    metrics = evaluate(model, dataset)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "metrics.json"), dumps_17g(metrics.to_dict()) + "\n")
    print(
        f"accuracy {metrics.accuracy:.4f}, per-class mean {metrics.per_class_mean:.4f}, "
        f"harmonic {metrics.harmonic_mean:.4f}, macro-F1 {metrics.macro_f1:.4f}"
    )
    return 0


_SUITE_ORDER = ("ifa-bound", "snc-factorization", "gradients", "oracles")


def _run_suite(name: str, args) -> "object":
    seed_flag = args.seed
    negative = args.negative_control
    if name == "ifa-bound":
        return verify_ifa_bound(
            trials=args.trials if args.trials is not None else 100,
            n_pairs=args.pairs if args.pairs is not None else 200000,
            seed=_resolve_seed(seed_flag, default=7),
            negative_control=negative,
        )
    if name == "snc-factorization":
        return verify_snc_factorization(
            trials=args.trials if args.trials is not None else 10,
            seed=_resolve_seed(seed_flag),
            negative_control=negative,
        )
    if name == "gradients":
        return verify_gradients(
            seed=_resolve_seed(seed_flag),
            n_instances=args.trials if args.trials is not None else 20,
            negative_control=negative,
        )
    if name == "oracles":
        return verify_oracles(seed=_resolve_seed(seed_flag), negative_control=negative)
    raise InvalidInputError(f"unknown suite {name!r}")


def _cmd_verify(args) -> int:
    names = _SUITE_ORDER if args.suite == "all" else (args.suite,)
    reports = [_run_suite(name, args) for name in names]
    payload = {"suites": [r.to_dict() for r in reports], "passed": all(r.passed for r in reports)}
    text = dumps_17g(payload) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text(os.path.join(args.out, "report.json"), text)
    sys.stdout.write(text)
    return 0 if payload["passed"] else 2


def _add_run_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--alpha1", type=float)
    parser.add_argument("--alpha2", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--lambda0", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--momentum", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--bank-fraction", dest="bank_fraction", type=float)
    parser.add_argument(
        "--hidden-dims",
        dest="hidden_dims",
        type=lambda s: [int(v) for v in s.split(",") if v],
        help="comma-separated hidden layer widths",
    )
    parser.add_argument("--feature-dim", dest="feature_dim", type=int)


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="sfda2", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic source/target datasets")
    p.add_argument("--spec", help="JSON shift-spec file (defaults to the built-in benchmark)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="train a source model on a labeled CSV")
    _add_run_config_flags(p)
    p.add_argument("--source", required=True, help="labeled source CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt a pretrained model to an unlabeled target CSV")
    _add_run_config_flags(p)
    p.add_argument("--model", required=True, help="source checkpoint")
    p.add_argument("--target", required=True, help="target CSV (labels, if any, are ignored)")
    p.add_argument("--eval-data", dest="eval_data", help="labeled CSV for per-epoch diagnostics")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("verify", help="run the property-verification suites")
    p.add_argument("--suite", choices=_SUITE_ORDER + ("all",), default="all")
    p.add_argument("--trials", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--negative-control", dest="negative_control", action="store_true")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_verify)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.handler(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
