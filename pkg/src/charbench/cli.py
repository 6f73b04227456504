"""``charbench`` command line: synth, pretrain, transfer, benchmark, audit, gradcheck.

Exit codes: 0 success, 1 runtime or assertion failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path
from typing import Optional

from . import report
from .arch import DISPLAY_NAMES, canonical_model_id, classifier_in_features, zoo_spec
from .autodiff import GRADCHECK_OPS, run_gradcheck_suite
from .data import TRAIN_FRACTION, DatasetError, ingest, split, synth_generate
from .network import FREEZE_POLICIES, ParamFileError, build, encode_params, set_freeze_policy
from .train import TrainConfig, TrainingError, fit, pretrain_source, transfer

log = logging.getLogger("charbench")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_EXTRA_KEYS = {
    "data": "str", "source": "str", "weights": "str", "weights_dir": "str", "models": "str",
    "arch": "str", "scale": "str", "out": "str", "deterministic": "bool",
    "train_fraction": "float", "pretrain_epochs": "int",
}
CONFIG_KEYS = dict(_TRAIN_KEYS, **_EXTRA_KEYS)


class UsageError(Exception):
    pass


class ConfigError(UsageError):
    pass


def _coerce(key: str, raw, kind: str):
    if raw is None or not isinstance(raw, str):
        return raw
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return raw


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value, CONFIG_KEYS[key])
    return values


def resolve_config(args, defaults: dict) -> dict:
    """defaults < --config file < explicit flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        merged.update(read_config(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def train_config(conf: dict) -> TrainConfig:
    try:
        return TrainConfig(**{k: conf[k] for k in _TRAIN_KEYS if k in conf})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def write_resolved(conf: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {conf[k]}" for k in sorted(conf) if conf[k] is not None]
    (out / "config.resolved").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _model_id(name: str) -> str:
    try:
        return canonical_model_id(name)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def _load_split(path, conf: dict):
    if not path:
        raise UsageError("--data is required")
    return split(ingest(path), conf.get("train_fraction", TRAIN_FRACTION), conf["seed"])


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


def _zero_times(metrics):
    return [dataclasses.replace(m, wall_seconds=0.0) for m in metrics]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    synth_generate(args.out, args.classes, args.per_class, args.seed)
    n = args.classes * args.per_class
    print(f"wrote {n} images in {args.classes} classes to {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    conf = resolve_config(args, dict(TrainConfig().to_dict(), freeze_policy="full_finetune",
                                     scale="mini", train_fraction=TRAIN_FRACTION))
    model = _model_id(conf.get("arch") or "")
    cfg = train_config(conf)
    out = Path(conf["out"])
    data = _load_split(conf.get("data"), conf)
    write_resolved(conf, out)
    weights = out / "weights.cbpw"
    _, history = pretrain_source(model, data, cfg, weights, scale=conf["scale"])
    if conf.get("deterministic"):
        history = _zero_times(history)
    run = report.BenchmarkRun(model, conf["scale"], cfg.to_dict(), history,
                              classifier_in_features(zoo_spec(model, conf["scale"], data.num_classes)))
    report.emit_epochs([run], out / "epochs.csv")
    print(f"saved {weights} after {len(history)} epochs "
          f"(final valid accuracy {history[-1].valid_accuracy:.4f})")
    return EXIT_OK


def _run_transfer(model: str, weights, data, cfg: TrainConfig, scale: str, deterministic: bool):
    result = transfer(model, weights, data, cfg, scale=scale)
    metrics = _zero_times(result.metrics) if deterministic else result.metrics
    run = report.BenchmarkRun(model, scale, cfg.to_dict(), metrics,
                              classifier_in_features(result.network.spec),
                              "" if deterministic else _now(),
                              "" if deterministic else platform.platform())
    cm = report.confusion(result.network, result.params, data.test, result.images,
                          data.num_classes, data.classes)
    return run, cm, result


def cmd_transfer(args) -> int:
    conf = resolve_config(args, dict(TrainConfig().to_dict(), scale="mini",
                                     train_fraction=TRAIN_FRACTION))
    model = _model_id(conf.get("arch") or "")
    cfg = train_config(conf)
    out = Path(conf["out"])
    if not conf.get("weights"):
        raise UsageError("--weights is required")
    data = _load_split(conf.get("data"), conf)
    write_resolved(conf, out)
    run, cm, result = _run_transfer(model, conf["weights"], data, cfg, conf["scale"],
                                    bool(conf.get("deterministic")))
    frozen = len(result.params.frozen_names())
    print(f"{frozen} frozen / {len(result.params)} parameters ({cfg.freeze_policy})")
    report.emit_report([run], "csv", out / "summary.csv")
    report.emit_report([run], "markdown", out / "summary.md")
    report.emit_epochs([run], out / "epochs.csv")
    report.emit_confusion(cm, out / "confusion.csv", run.name)
    _print_pairs(run.name, cm)
    return EXIT_OK


def _print_pairs(name: str, cm, k: int = 5) -> None:
    pairs = report.top_confused_pairs(cm, k)
    if pairs:
        text = ", ".join(f"{cm.classes[a]}<->{cm.classes[b]} ({n})" for a, b, n in pairs)
        print(f"{name}: most confused pairs: {text}")


def _benchmark_one(model, conf, data, source):
    """Pretrain (optional) and transfer one model; returns (run, confusion, weights bytes)."""
    cfg = train_config(conf)
    scale = conf["scale"]
    deterministic = bool(conf.get("deterministic"))
    weights = None
    if source is not None:
        pre_cfg = dataclasses.replace(cfg, freeze_policy="full_finetune",
                                      epochs=conf.get("pretrain_epochs") or cfg.epochs)
        net, params = build(zoo_spec(model, scale, source.num_classes), pre_cfg.seed)
        set_freeze_policy(params, "full_finetune")
        fit(net, params, source, pre_cfg)
        weights = encode_params(params)
    elif conf.get("weights_dir"):
        weights = (Path(conf["weights_dir"]) / f"{DISPLAY_NAMES[model]}.cbpw").read_bytes()
    else:
        log.warning("%s: no --source or --weights-dir; using randomly initialised features", model)
    run, cm, _ = _run_transfer(model, weights, data, cfg, scale, deterministic)
    return run, cm, weights


def cmd_benchmark(args) -> int:
    conf = resolve_config(args, dict(TrainConfig().to_dict(), scale="mini",
                                     train_fraction=TRAIN_FRACTION, models=",".join(DISPLAY_NAMES.values())))
    workers = getattr(args, "parallel", None)
    if workers and conf.get("deterministic"):
        raise UsageError("--parallel cannot be combined with --deterministic")
    models = [_model_id(m) for m in str(conf["models"]).split(",") if m.strip()]
    if not models:
        raise UsageError("--models is empty")
    train_config(conf)
    out = Path(conf["out"])
    data = _load_split(conf.get("data"), conf)
    source = _load_split(conf["source"], conf) if conf.get("source") else None
    write_resolved(conf, out)

    outcomes = {}
    if workers:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {m: pool.submit(_benchmark_one, m, conf, data, source) for m in models}
            for m, fut in futures.items():
                try:
                    outcomes[m] = fut.result()
                except Exception as exc:  # recorded per model
                    outcomes[m] = exc
    else:
        for m in models:
            try:
                outcomes[m] = _benchmark_one(m, conf, data, source)
            except (TrainingError, ValueError, OSError) as exc:
                outcomes[m] = exc

    runs, blocks, failed = [], [], []
    for m in models:
        res = outcomes[m]
        if isinstance(res, Exception):
            log.error("%s failed: %s", DISPLAY_NAMES[m], res)
            failed.append(m)
            continue
        run, cm, weights = res
        runs.append(run)
        blocks.append(report.confusion_csv(cm, run.name))
        if weights is not None and conf.get("source"):
            (out / "weights").mkdir(parents=True, exist_ok=True)
            (out / "weights" / f"{run.name}.cbpw").write_bytes(weights)
        _print_pairs(run.name, cm)
    if runs:
        report.emit_report(runs, "csv", out / "summary.csv")
        report.emit_report(runs, "markdown", out / "summary.md")
        report.emit_epochs(runs, out / "epochs.csv")
        (out / "confusion.csv").write_text("\n".join(blocks), encoding="utf-8", newline="")
        print(report.summary_markdown(runs), end="")
    if failed:
        print(f"failed models: {', '.join(DISPLAY_NAMES[m] for m in failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# tests swap this to inject a broken spec list
AUDIT_SPECS = None


def cmd_audit(args) -> int:
    rows = report.audit_architectures(AUDIT_SPECS() if callable(AUDIT_SPECS) else AUDIT_SPECS)
    text = report.audit_csv(rows) if args.format == "csv" else report.audit_text(rows)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "audit.csv").write_text(report.audit_csv(rows), encoding="utf-8")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    ops = None
    if args.op:
        wanted = [o.strip() for spec in args.op for o in spec.split(",") if o.strip()]
        # a family name such as "conv2d" also selects its variants ("conv2d_strided", ...)
        ops = [name for name in GRADCHECK_OPS
               if any(name == w or name.startswith(w + "_") for w in wanted)]
        for w in wanted:
            if not any(name == w or name.startswith(w + "_") for name in GRADCHECK_OPS):
                raise UsageError(f"unknown op {w!r}; choose from {', '.join(GRADCHECK_OPS)}")
    results = run_gradcheck_suite(ops, range(args.seeds), args.tolerance)
    for r in results:
        print(f"{r.op_name:<24} max_rel_error={r.max_rel_error:.3e}  {'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; explicit flags override it")
    p.add_argument("--data", help="dataset root (<root>/<class>/<file>.png)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scale", choices=("mini", "full"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--step-size", dest="step_size", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--freeze", dest="freeze_policy", choices=FREEZE_POLICIES)
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single thread, timing columns written as 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="charbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic glyph dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", dest="per_class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train a mini model end to end on a source dataset")
    p.add_argument("--arch")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("transfer", help="train a new head on pretrained features")
    p.add_argument("--arch")
    p.add_argument("--weights", help="parameter file from 'pretrain'")
    _add_train_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("benchmark", help="transfer every listed model and report")
    p.add_argument("--models", help="comma-separated model names")
    p.add_argument("--source", help="source dataset to pretrain each model on")
    p.add_argument("--weights-dir", dest="weights_dir", help="directory of <model>.cbpw files")
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--parallel", type=int, metavar="N", help="run models in N worker processes")
    _add_train_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("audit", help="check full-scale architectures against reference sizes")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out", help="also write audit.csv into this directory")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.add_argument("--op", action="append", help="restrict to these ops (repeatable, comma-separated)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _thread_limit(args) -> Optional[int]:
    if getattr(args, "deterministic", None):
        return 1
    env = os.environ.get("CHARBENCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CHARBENCH_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit(args)
        if limit is not None:
            from threadpoolctl import threadpool_limits

            ctx = threadpool_limits(limits=limit)
        else:
            ctx = nullcontext()
        with ctx:
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"charbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ParamFileError, TrainingError, report.ReportError, OSError, ValueError) as exc:
        print(f"charbench: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
