"""Command-line surface: single runs, threshold sweeps, dense-vs-delta
comparison, correlation analysis, and fixture generation.

Exit codes: 0 success, 2 usage, 3 file/format, 4 shape, 5 numeric range,
1 anything else. Every command is deterministic given its arguments,
including sweeps running on multiple workers (results are gathered and
sorted before anything is written).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as dio
from .accounting import StageId
from .analysis import subthreshold_fraction
from .analysis import row_delta_tensor
from .errors import EngineError, FormatError, NumericError, ShapeError
from .model import (
    ModelConfig,
    ThresholdConfig,
    classify,
    delta_forward,
    dense_forward,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_SHAPE = 4
EXIT_NUMERIC = 5

_THETA_FLAGS = ("theta_x", "theta_q", "theta_k", "theta_att", "theta_softmax", "theta_head")


def _add_threshold_args(p: argparse.ArgumentParser, multi: bool = False) -> None:
    kw = {"type": float, "default": None}
    if multi:
        kw["nargs"] = "+"
    for name in _THETA_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), **kw)
    p.add_argument("--preset", choices=["paper-square"], default=None,
                   help="named threshold tuple (overridden by explicit flags)")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", "-w", required=True)
    p.add_argument("--precision", choices=["single", "double"], default=None)
    p.add_argument("--last-layer-opt", action="store_true")


def _resolve_thresholds(args, index: int | None = None) -> ThresholdConfig:
    base = ThresholdConfig.square_preset() if args.preset == "paper-square" else ThresholdConfig.zeros()
    values = {}
    for name in _THETA_FLAGS:
        v = getattr(args, name)
        if v is None:
            values[name] = getattr(base, name)
        else:
            values[name] = v[index] if index is not None else v
    return ThresholdConfig(**values)


def _load_model(args):
    weights, config = dio.load_weights(args.weights)
    if args.precision is not None and args.precision != config.precision:
        config = replace(config, precision=args.precision)
    if getattr(args, "last_layer_opt", False):
        config = replace(config, last_layer_opt=True)
    weights = weights.astype(config.np_dtype)
    return weights, config


def _load_features(path, config: ModelConfig):
    feats = dio.load_features(path, dtype=config.np_dtype)
    if feats.shape != (config.seq_tokens, config.feature_dim):
        raise ShapeError(
            f"{path}: features are {feats.shape[0]}x{feats.shape[1]}, "
            f"model expects {config.seq_tokens}x{config.feature_dim}"
        )
    return feats


def _input_label(stem: str, labels: list[str] | None) -> int | None:
    prefix = stem.split("__")[0]
    if labels:
        return labels.index(prefix) if prefix in labels else None
    return int(prefix) if prefix.isdigit() else None


def _cmd_gen(args) -> int:
    if args.kind == "weights":
        if args.preset == "kwt3":
            config = ModelConfig.kwt3(norm_placement=args.norm_placement)
        else:
            config = ModelConfig(
                seq_tokens=args.seq_tokens, feature_dim=args.feature_dim,
                embed_dim=args.embed_dim, mlp_dim=args.mlp_dim, heads=args.heads,
                layers=args.layers, num_classes=args.num_classes,
                norm_placement=args.norm_placement,
            )
        weights = dio.gen_weights(args.seed, config)
        dio.save_weights(args.out, weights, config)
    else:
        feats = dio.gen_features(args.seed, args.seq_tokens, args.feature_dim,
                                 rho=args.rho, jump_prob=args.jump_prob)
        if str(args.out).endswith(".csv"):
            dio.save_matrix_csv(args.out, feats)
        else:
            dio.save_features(args.out, feats)
    print(f"wrote {args.out}")
    return EXIT_OK


def _run_once(weights, config, feats, input_id, mode, thresholds):
    if mode == "dense":
        logits, report = dense_forward(feats, weights, config)
    else:
        logits, report = delta_forward(feats, weights, config, thresholds)
    return dio.RunRecord(
        input_id=input_id, mode=mode, thresholds=thresholds,
        predicted_class=classify(logits), report=report, logits=logits,
    )


def _cmd_run(args) -> int:
    weights, config = _load_model(args)
    feats = _load_features(args.features, config)
    thresholds = _resolve_thresholds(args)
    started = time.perf_counter()
    record = _run_once(weights, config, feats, Path(args.features).stem, args.mode, thresholds)
    elapsed = time.perf_counter() - started
    if args.report:
        dio.emit_report(record, args.format, args.report)
    print(f"class={record.predicted_class}")
    print(f"executed_mhsa_pct={100.0 * record.report.total_fraction_layer_mean():.2f}")
    print(f"elapsed_seconds={elapsed:.3f}", file=sys.stderr)
    return EXIT_OK


def _cmd_compare(args) -> int:
    weights, config = _load_model(args)
    feats = _load_features(args.features, config)
    thresholds = _resolve_thresholds(args)
    dense_logits, _ = dense_forward(feats, weights, config)
    delta_logits, report = delta_forward(feats, weights, config, thresholds)
    dev = np.abs(delta_logits - dense_logits)
    doc = {
        "input_id": Path(args.features).stem,
        "thresholds": thresholds.as_dict(),
        "max_abs_logit_deviation": float(dev.max()),
        "mean_abs_logit_deviation": float(dev.mean()),
        "predicted_dense": classify(dense_logits),
        "predicted_delta": classify(delta_logits),
        "fallback_events": report.fallback_total(),
        "retained": {
            f"layer{layer}.{site}": {"kept": kept, "candidates": cand}
            for (layer, site), (kept, cand) in sorted(report.retained.items())
        },
    }
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    print(f"max_abs_logit_deviation={doc['max_abs_logit_deviation']:.6e}")
    print(f"mean_abs_logit_deviation={doc['mean_abs_logit_deviation']:.6e}")
    print(f"predicted_dense={doc['predicted_dense']} predicted_delta={doc['predicted_delta']}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    weights, config = _load_model(args)
    feats = _load_features(args.features, config)
    capture: dict[str, np.ndarray] = {}
    dense_forward(feats, weights, config, capture=capture)
    lines = ["layer,site,pct,dynamic_range,below_fraction"]
    dump_dir = Path(args.dump_dir) if args.dump_dir else None
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
    for layer in range(config.layers):
        sites = [("input", capture[f"layer{layer}.input"])]
        for h in range(config.heads):
            sites.append((f"softmax.h{h}", capture[f"layer{layer}.softmax.h{h}"]))
        for site, matrix in sites:
            stats = subthreshold_fraction(matrix, args.pct)
            lines.append(
                f"{layer},{site},{args.pct:g},{stats.dynamic_range:.6e},{stats.below_fraction:.6f}"
            )
            if dump_dir is not None:
                tag = f"layer{layer}_{site.replace('.', '_')}"
                dio.save_matrix_csv(dump_dir / f"{tag}.csv", matrix)
                dio.save_matrix_csv(dump_dir / f"{tag}_delta.csv", row_delta_tensor(matrix))
    body = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(body, encoding="utf-8")
    else:
        print(body, end="")
    return EXIT_OK


_WORKER = {}


def _sweep_init(weights_path, precision, last_layer_opt):
    ns = argparse.Namespace(weights=weights_path, precision=precision,
                            last_layer_opt=last_layer_opt)
    _WORKER["weights"], _WORKER["config"] = _load_model(ns)


def _sweep_task(task):
    input_id, feat_path, theta_tuple, dense_logits, label = task
    weights, config = _WORKER["weights"], _WORKER["config"]
    feats = _load_features(feat_path, config)
    thresholds = ThresholdConfig(*theta_tuple)
    logits, report = delta_forward(feats, weights, config, thresholds)
    return {
        "input_id": input_id,
        "tuple": theta_tuple,
        "pcts": [
            report.stage_fraction_mean(StageId.PROJ_QKV),
            report.stage_fraction_mean(StageId.ATT_SCORES),
            report.stage_fraction_mean(StageId.ATT_CONTEXT),
            report.stage_fraction_mean(StageId.HEAD_PROJ),
            report.total_fraction_layer_mean(),
        ],
        "speedup": report.speedup(),
        "predicted": classify(logits),
        "logit_dev": float(np.abs(logits - dense_logits).max()),
        "label": label,
    }


def _grid_tuples(args) -> list[tuple]:
    if args.tuples:
        spec = json.loads(Path(args.tuples).read_text(encoding="utf-8"))
        if not isinstance(spec, list) or not spec:
            raise FormatError(f"{args.tuples}: tuple list must be a non-empty JSON array")
        out = []
        for row in spec:
            if not isinstance(row, list) or len(row) != 6:
                raise FormatError(f"{args.tuples}: each tuple must hold six thresholds")
            out.append(tuple(float(v) for v in row))
        return out
    base = ThresholdConfig.square_preset() if args.preset == "paper-square" else ThresholdConfig.zeros()
    lists = []
    for name in _THETA_FLAGS:
        v = getattr(args, name)
        lists.append([getattr(base, name)] if v is None else list(v))
    out = [()]
    for values in lists:
        out = [t + (v,) for t in out for v in values]
    return out


def _mark_pareto(rows: list[dict]) -> None:
    """Non-dominated in (logit deviation, executed fraction), per input."""
    by_input: dict[str, list[dict]] = {}
    for r in rows:
        by_input.setdefault(r["input_id"], []).append(r)
    for group in by_input.values():
        for r in group:
            r["pareto"] = not any(
                (o["logit_dev"] <= r["logit_dev"] and o["pcts"][4] <= r["pcts"][4]
                 and (o["logit_dev"] < r["logit_dev"] or o["pcts"][4] < r["pcts"][4]))
                for o in group
            )


def _cmd_sweep(args) -> int:
    weights, config = _load_model(args)
    tuples = _grid_tuples(args)
    if not args.inputs:
        raise FormatError("sweep needs at least one input file")
    labels = args.labels.split(",") if args.labels else None

    tasks = []
    for feat_path in args.inputs:
        stem = Path(feat_path).stem
        feats = _load_features(feat_path, config)
        dense_logits, _ = dense_forward(feats, weights, config)
        label = _input_label(stem, labels)
        for t in tuples:
            tasks.append((stem, feat_path, t, dense_logits, label))

    if args.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=args.jobs,
            initializer=_sweep_init,
            initargs=(args.weights, args.precision, args.last_layer_opt),
        ) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        _sweep_init(args.weights, args.precision, args.last_layer_opt)
        rows = [_sweep_task(t) for t in tasks]

    rows.sort(key=lambda r: (r["input_id"], r["tuple"]))
    _mark_pareto(rows)

    lines = [",".join(dio.CSV_COLUMNS + dio.SWEEP_EXTRA_COLUMNS)]
    for r in rows:
        cells = [
            r["input_id"],
            *(f"{v:g}" for v in r["tuple"]),
            *(f"{100.0 * p:.2f}" for p in r["pcts"]),
            f"{r['speedup']:.2f}",
            str(r["predicted"]),
            f"{r['logit_dev']:.6e}",
            "" if r["label"] is None else str(int(r["label"] == r["predicted"])),
            str(int(r["pareto"])),
        ]
        lines.append(",".join(cells))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deltakws",
                                     description="delta-mode transformer inference engine")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic weight/feature fixtures")
    g.add_argument("kind", choices=["weights", "features"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", "-o", required=True)
    g.add_argument("--preset", choices=["kwt3"], default=None)
    g.add_argument("--seq-tokens", type=int, default=98)
    g.add_argument("--feature-dim", type=int, default=40)
    g.add_argument("--embed-dim", type=int, default=192)
    g.add_argument("--mlp-dim", type=int, default=768)
    g.add_argument("--heads", type=int, default=3)
    g.add_argument("--layers", type=int, default=12)
    g.add_argument("--num-classes", type=int, default=12)
    g.add_argument("--norm-placement", choices=["post", "pre"], default="post")
    g.add_argument("--rho", type=float, default=0.0)
    g.add_argument("--jump-prob", type=float, default=0.0)
    g.set_defaults(func=_cmd_gen)

    r = sub.add_parser("run", help="run one input, optionally writing a report")
    _add_run_args(r)
    r.add_argument("--features", "-f", required=True)
    r.add_argument("--mode", choices=["dense", "delta"], default="delta")
    r.add_argument("--report", default=None)
    r.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_threshold_args(r)
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="dense vs delta deviation report")
    _add_run_args(c)
    c.add_argument("--features", "-f", required=True)
    c.add_argument("--report", default=None)
    _add_threshold_args(c)
    c.set_defaults(func=_cmd_compare)

    a = sub.add_parser("analyze", help="token-correlation statistics per layer/site")
    _add_run_args(a)
    a.add_argument("--features", "-f", required=True)
    a.add_argument("--pct", type=float, default=1.0)
    a.add_argument("--out", default=None)
    a.add_argument("--dump-dir", default=None)
    a.set_defaults(func=_cmd_analyze)

    s = sub.add_parser("sweep", help="grid evaluation over threshold tuples")
    _add_run_args(s)
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out", "-o", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--tuples", default=None,
                   help="JSON file with an explicit list of six-value tuples")
    s.add_argument("--labels", default=None,
                   help="comma-separated label vocabulary for the accuracy column")
    _add_threshold_args(s, multi=True)
    s.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK
    try:
        return args.func(args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ShapeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except EngineError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
