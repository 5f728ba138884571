"""Command-line entry point: ``nsibf <command> [options]``.

Commands: simulate, train, tune, score, eval, gradcheck, rerun.

Every option resolves as command-line flag, then the ``--config`` JSON file
(keys are the option names with underscores), then the built-in default. The
seed additionally falls back to the ``NSIBF_SEED`` environment variable before
its default. Each run writes ``manifest_<command>.json`` into its output
directory with the resolved options, seeds, input digests and output digests;
``nsibf rerun <manifest>`` repeats the run from it.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure
(divergence, filter breakdown, failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import Schema, load_csv, write_csv
from .detector import VARIANTS, ScoreTrace, run_variant
from .errors import NsibfError, ValidationError
from .evaluation import evaluate, row_granularity
from .model import GRADCHECK_CONFIG, NetConfig, NsibfModel, gradient_check, train
from .simcps import SimConfig, simulate_normal, simulate_test
from .tuning import NegSampleSpec, SearchSpace, random_search_tune, write_leaderboard

log = logging.getLogger("nsibf")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
SEED_ENV = "NSIBF_SEED"

_NET_DEFAULTS = {f.name: f.default for f in fields(NetConfig) if f.name not in ("n_sensors", "n_actuators", "seed")}
_NET_TYPES = {
    "window_unit": str, "activation": str, "lr": float, "clip_norm": float,
    "w1": float, "w2": float, "w3": float,
}


def _net_options(defaults=None):
    defaults = {**_NET_DEFAULTS, **(defaults or {})}
    return [(name, _NET_TYPES.get(name, int), defaults[name]) for name in _NET_DEFAULTS]


# (name, type, default); a default of ... marks a required option
OPTIONS = {
    "simulate": [
        ("out", str, ...), ("n_train", int, 10000), ("n_test", int, 10000), ("noise", float, 1.0),
        ("process_std", float, 0.1), ("measurement_std", float, 0.2), ("anomaly_std", float, 0.6),
        ("anomaly_length", int, 100), ("anomaly_period", int, 1000), ("anomaly_offset", int, 0),
        ("first_anomaly_block", int, 1),
    ],
    "train": [("data", str, ...), ("schema", str, None), ("out", str, ...), *_net_options()],
    "tune": [
        ("data", str, ...), ("schema", str, None), ("out", str, ...), ("budget", int, 8),
        ("space", str, None), ("test", str, None), ("delta", float, 0.05), ("jobs", int, 1), *_net_options(),
    ],
    "score": [
        ("model", str, ...), ("data", str, ...), ("schema", str, None), ("out", str, ...),
        ("variant", str, "nsibf"), ("limit", int, None), ("epsilon", float, 1e-4), ("kappa", float, None),
    ],
    "eval": [
        ("trace", str, ...), ("out", str, ...), ("data", str, None), ("schema", str, None), ("stack", int, None),
    ],
    "gradcheck": [
        ("out", str, "."), ("items", int, 10), ("tolerance", float, 1e-4), ("step", float, 1e-5),
        ("fault", float, 0.0), ("sensors", int, 2), ("actuators", int, 1),
        *_net_options({k: v for k, v in GRADCHECK_CONFIG.items() if k in _NET_DEFAULTS}),
    ],
}
SWITCHES = {
    "simulate": [],
    "train": ["plot"],
    "tune": ["plot"],
    "score": ["full_trace", "reinit_on_failure", "posterior", "plot"],
    "eval": ["plot"],
    "gradcheck": [],
}
HELP = {
    "simulate": "generate the synthetic train/test series",
    "train": "fit a model on normal data",
    "tune": "random hyperparameter search ranked by negative-sampling F1",
    "score": "score a series with a trained model",
    "eval": "best-F1 and ROC metrics for score traces",
    "gradcheck": "compare backprop against finite differences",
    "rerun": "repeat a run from its manifest",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsibf", description="Neural system identification and Bayesian filtering for anomaly detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd, help=HELP[cmd], parents=[common])
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("--seed", type=int, help=f"master seed (falls back to ${SEED_ENV}, then 0)")
        for name, typ, default in opts:
            flag = "--" + name.replace("_", "-")
            shown = "required" if default is ... else f"default {default}"
            if cmd == "eval" and name == "trace":
                p.add_argument(flag, nargs="+", help="score trace CSV(s)")
            elif name == "variant":
                p.add_argument(flag, choices=[*VARIANTS, "all"], help=shown)
            elif name == "window_unit":
                p.add_argument(flag, choices=["super", "raw"], help=shown)
            else:
                p.add_argument(flag, type=typ, help=shown)
        for name in SWITCHES[cmd]:
            p.add_argument("--" + name.replace("_", "-"), action="store_true", default=None)
    p = sub.add_parser("rerun", help=HELP["rerun"], parents=[common])
    p.add_argument("manifest")
    return parser


def resolve(cmd: str, args: argparse.Namespace) -> dict:
    """Flag > config file > (NSIBF_SEED for the seed) > default."""
    config = {}
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
    known = {n for n, _, _ in OPTIONS[cmd]} | set(SWITCHES[cmd]) | {"seed"}
    unknown = sorted(set(config) - known)
    if unknown:
        raise ValidationError(f"unknown option(s) in {args.config}: {unknown}")
    out = {}
    for name, typ, default in OPTIONS[cmd]:
        value = getattr(args, name)
        if value is None:
            value = config.get(name, default)
        if value is ...:
            raise ValidationError(f"--{name.replace('_', '-')} is required (flag or config)")
        out[name] = value
    for name in SWITCHES[cmd]:
        value = getattr(args, name)
        out[name] = bool(config.get(name, False) if value is None else value)
    seed = args.seed
    if seed is None:
        seed = config.get("seed")
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer, got {os.environ[SEED_ENV]!r}") from None
    out["seed"] = 0 if seed is None else int(seed)
    return out


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cmd: str, opts: dict, inputs: list, outputs: list, extra=None) -> Path:
    out_dir = Path(opts["out"])
    manifest = {
        "command": cmd,
        "config": opts,
        "seeds": {"master": opts["seed"]},
        "inputs": {str(p): sha256(p) for p in inputs if p},
        "outputs": {str(p): sha256(p) for p in outputs},
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / f"manifest_{cmd}.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _schema(opts) -> Schema | None:
    return Schema.from_json(opts["schema"]) if opts.get("schema") else None


def _net_config(opts, frame) -> NetConfig:
    kw = {k: opts[k] for k in _NET_DEFAULTS}
    return NetConfig(n_sensors=frame.n_sensors, n_actuators=frame.n_actuators, seed=opts["seed"], **kw)


def _window_note(cfg: NetConfig) -> str:
    if cfg.window_unit == "raw":
        note = f"window of {cfg.window} raw time points fed row by row to the LSTM"
    else:
        note = f"window of {cfg.window} super-steps ({cfg.window * cfg.stack} time points)"
    log.info("window unit: %s", note)
    return note


def _out_dir(opts) -> Path:
    out = Path(opts["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_simulate(opts) -> int:
    out = _out_dir(opts)
    k = opts["noise"]
    if k < 0:
        raise ValidationError("--noise must be non-negative")
    cfg = SimConfig(
        process_std=opts["process_std"] * k, measurement_std=opts["measurement_std"] * k,
        anomaly_std=opts["anomaly_std"] * k, anomaly_length=opts["anomaly_length"],
        anomaly_period=opts["anomaly_period"], anomaly_offset=opts["anomaly_offset"],
        first_anomaly_block=opts["first_anomaly_block"], seed=opts["seed"],
    )
    train_frame = simulate_normal(cfg, opts["n_train"])
    test_frame = simulate_test(cfg, opts["n_test"])
    paths = [out / "train.csv", out / "test.csv", out / "schema.json"]
    write_csv(train_frame, paths[0])
    write_csv(test_frame, paths[1])
    with open(paths[2], "w") as fh:
        json.dump(Schema(["x"], ["u"], "label").to_dict(), fh, indent=2)
        fh.write("\n")
    write_manifest("simulate", opts, [], paths, {"simulation": cfg.to_dict()})
    n_anom = int(test_frame.labels.sum())
    print(f"train {len(train_frame)} rows -> {paths[0]}")
    print(f"test {len(test_frame)} rows ({n_anom} anomalous) -> {paths[1]}")
    return EXIT_OK


def _write_history(history: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (a, b) in enumerate(zip(history["train_loss"], history["val_loss"]), start=1):
            w.writerow([i, repr(float(a)), repr(float(b))])


def cmd_train(opts) -> int:
    out = _out_dir(opts)
    frame = load_csv(opts["data"], _schema(opts))
    cfg = _net_config(opts, frame)
    note = _window_note(cfg)

    def progress(epoch, tr, val):
        log.info("epoch %d/%d train %.6f val %.6f", epoch, cfg.epochs, tr, val)

    model = train(frame, cfg, progress)
    paths = [out / "model.nsibf", out / "training_log.csv"]
    model.save(paths[0])
    _write_history(model.metadata["history"], paths[1])
    if opts["plot"]:
        from .plotting import plot_history

        paths.append(plot_history(model.metadata["history"], out / "training.png"))
    write_manifest(
        "train", opts, [opts["data"], opts["schema"]], paths,
        {"window_unit_note": note, "net_config": cfg.to_dict(), "fingerprint": model.fingerprint()},
    )
    hist = model.metadata["history"]
    print(f"best epoch {hist['best_epoch']} val loss {model.metadata['best_val_loss']:.6g}")
    print(f"model {model.fingerprint()} -> {paths[0]}")
    return EXIT_OK


def cmd_tune(opts) -> int:
    out = _out_dir(opts)
    schema = _schema(opts)
    frame = load_csv(opts["data"], schema)
    base = _net_config(opts, frame)
    note = _window_note(base)
    space = SearchSpace.from_json(opts["space"]) if opts["space"] else SearchSpace()
    test = load_csv(opts["test"], schema, require_label=True) if opts["test"] else None
    neg = NegSampleSpec(delta=opts["delta"], seed=opts["seed"])
    result = random_search_tune(frame, base, space, opts["budget"], opts["seed"], neg, test, opts["jobs"])
    paths = [out / "leaderboard.csv", out / "best.nsibf"]
    write_leaderboard(result, paths[0])
    result.model.save(paths[1])
    if opts["plot"]:
        from .plotting import plot_tuning

        paths.append(plot_tuning(result.trials, out / "tuning.png"))
    write_manifest(
        "tune", opts, [opts["data"], opts["schema"], opts["space"], opts["test"]], paths,
        {"window_unit_note": note, "search_space": space.params, "best_trial": result.best.trial},
    )
    failed = sum(not t.ok for t in result.trials)
    print(f"{len(result.trials)} trials ({failed} failed); best trial {result.best.trial} "
          f"mean F1 {result.best.mean_f1:.4f} params {result.best.params}")
    return EXIT_OK


def cmd_score(opts) -> int:
    out = _out_dir(opts)
    model = NsibfModel.load(opts["model"])
    frame = load_csv(opts["data"], _schema(opts))
    variants = VARIANTS if opts["variant"] == "all" else (opts["variant"],)
    paths, status = [], EXIT_OK
    for v in variants:
        trace = run_variant(
            model, frame, v, epsilon=opts["epsilon"], kappa=opts["kappa"], limit=opts["limit"],
            reinit_on_failure=opts["reinit_on_failure"], posterior=opts["posterior"],
        )
        path = out / f"trace_{v}.csv"
        trace.to_csv(path, full=opts["full_trace"])
        paths.append(path)
        if opts["plot"]:
            from .plotting import plot_trace

            paths.append(plot_trace(trace, out / f"trace_{v}.png"))
        if trace.error is not None:
            print(f"{v}: stopped at step {trace.error['t']}: {trace.error['message']}", file=sys.stderr)
            status = EXIT_NUMERICAL
        print(f"{v}: {len(trace)} scored super-steps -> {path}")
    write_manifest(
        "score", opts, [opts["model"], opts["data"], opts["schema"]], paths,
        {"fingerprint": model.fingerprint(), "stack": model.config.stack, "warmup": model.window_spec.warmup},
    )
    return status


def cmd_eval(opts) -> int:
    out = _out_dir(opts)
    row_labels = None
    if opts["data"]:
        if not opts["stack"]:
            raise ValidationError("--stack is required with --data for row-level metrics")
        row_labels = load_csv(opts["data"], _schema(opts), require_label=True).labels
    paths, curves = [], {}
    for trace_path in opts["trace"]:
        trace = ScoreTrace.from_csv(trace_path)
        if trace.labels is None:
            raise ValidationError(f"{trace_path}: trace has no label column")
        reports = evaluate(trace.score, trace.labels)
        payload = {k: r.to_dict() for k, r in reports.items()}
        if row_labels is not None:
            scores, labels = row_granularity(trace.t, trace.score, opts["stack"], row_labels)
            payload.update({f"rows_{k}": r.to_dict() for k, r in evaluate(scores, labels).items()})
        payload["n_scored"] = int(len(trace))
        if trace.error is not None:
            payload["truncated_at"] = trace.error["t"]
        name = trace.variant
        report_path, roc_path = out / f"report_{name}.json", out / f"roc_{name}.csv"
        with open(report_path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(report_path)
        if reports["raw"].roc is not None:
            reports["raw"].roc.to_csv(roc_path)
            paths.append(roc_path)
            curves[name] = reports["raw"].roc
        adj, raw = reports["adjusted"], reports["raw"]
        print(f"{name}: adjusted F1 {adj.f1:.4f} (P {adj.precision:.4f} R {adj.recall:.4f}) "
              f"raw F1 {raw.f1:.4f} AUC {raw.auc if raw.auc is not None else float('nan'):.4f}")
    if opts["plot"] and curves:
        from .plotting import plot_roc

        paths.append(plot_roc(curves, out / "roc.png"))
    write_manifest("eval", opts, [*opts["trace"], opts["data"], opts["schema"]], paths)
    return EXIT_OK


def cmd_gradcheck(opts) -> int:
    kw = {k: opts[k] for k in _NET_DEFAULTS}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = NetConfig(n_sensors=opts["sensors"], n_actuators=opts["actuators"], seed=opts["seed"], **kw)
    rep = gradient_check(cfg, opts["items"], opts["seed"], opts["tolerance"], opts["step"], opts["fault"])
    print(rep.summary())
    path = _out_dir(opts) / "gradcheck.json"
    with open(path, "w") as fh:
        json.dump({
            "passed": rep.passed, "max_rel_error": rep.max_rel_error, "worst_index": rep.worst_index,
            "worst_name": rep.worst_name, "tolerance": rep.tolerance, "n_coords": int(rep.coords.size),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest("gradcheck", opts, [], [path], {"net_config": cfg.to_dict()})
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


COMMANDS = {
    "simulate": cmd_simulate, "train": cmd_train, "tune": cmd_tune, "score": cmd_score,
    "eval": cmd_eval, "gradcheck": cmd_gradcheck,
}


def cmd_rerun(path) -> int:
    with open(path) as fh:
        manifest = json.load(fh)
    cmd = manifest.get("command")
    if cmd not in COMMANDS:
        raise ValidationError(f"{path}: unknown command {cmd!r}")
    for p, digest in manifest.get("inputs", {}).items():
        if not Path(p).exists():
            raise ValidationError(f"input {p} recorded in the manifest is missing")
        if sha256(p) != digest:
            log.warning("input %s changed since the manifest was written", p)
    return COMMANDS[cmd](manifest["config"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "rerun":
            return cmd_rerun(args.manifest)
        return COMMANDS[args.command](resolve(args.command, args))
    except NsibfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
