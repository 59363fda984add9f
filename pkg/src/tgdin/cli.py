"""Command-line entry point.

Subcommands: generate (grid|calibration|corpus), train, train-baseline,
finetune, evaluate (cross-capacity|finetune-study), infer, ingest,
report.  Every run writes its resolved config snapshot, the resolved
seed, and a manifest of produced artifacts with content hashes under
--out, so any run is reproducible from the snapshot and seed alone.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import regimegen as rg
from .baselines import FinetuneSpec, finetune_direct, train_direct
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, ConfigError, config_to_dict, load_config
from .core import SimConstants, regime_to_dict, regime_from_dict
from .ingest import aggregate_packets, read_packet_csv, reconstruct_features
from .report import emit_report, read_metrics_csv
from .rng import mix64
from .studies import run_cross_capacity, run_finetune_study
from .traceio import read_trace_csv, write_trace_csv
from .training import infer_demand, train_tgdin

log = logging.getLogger("tgdin")


class CliError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _finish_run(out_dir: Path, cfg: Config, artifacts: list[Path],
                command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snap = out_dir / "config.json"
    snap.write_text(json.dumps(config_to_dict(cfg), sort_keys=True, indent=1)
                    + "\n")
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "artifacts": [
            {"path": str(p.relative_to(out_dir)), "sha256": _sha256(p)}
            for p in sorted(set(artifacts))
        ],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def _load_cfg(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _load_traces(directory: str | Path) -> list:
    paths = sorted(Path(directory).glob("*.csv"))
    traces = [read_trace_csv(p) for p in paths]
    if not traces:
        raise CliError(f"no trace CSVs found under {directory}")
    return traces


def _synth_one(payload):
    spec_dict, seed, sim_kwargs, cfg_kwargs = payload
    from .config import RegimeConfig
    spec = regime_from_dict(spec_dict)
    consts = SimConstants(**sim_kwargs)
    return rg.synthesize_trace(spec, seed, consts, RegimeConfig(**cfg_kwargs))


def _synthesize_many(jobs_specs, cfg: Config, jobs: int):
    """Synthesize (spec, seed) pairs, optionally across processes."""
    from dataclasses import asdict
    if jobs <= 1:
        return [rg.synthesize_trace(spec, seed, cfg.sim, cfg.regimes)
                for spec, seed in jobs_specs]
    payloads = [(regime_to_dict(spec), seed, asdict(cfg.sim),
                 asdict(cfg.regimes)) for spec, seed in jobs_specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_synth_one, payloads))


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []

    def write(trace, name):
        path = out_dir / name
        write_trace_csv(trace, path, cfg.sim.dt_s)
        artifacts.append(path)
        meta = Path(str(path) + ".meta.json")
        if meta.exists():
            artifacts.append(meta)

    if args.what == "grid":
        pairs, names = [], []
        scenarios = rg.drift_scenarios()
        for ci, cap in enumerate(cfg.regimes.grid_capacities):
            for si, (sname, scen) in enumerate(scenarios.items()):
                spec = rg.grid_regime(cap, scen, cfg.regimes.length_windows)
                for rep in range(cfg.regimes.grid_replicates):
                    pairs.append((spec, mix64(cfg.seed, rg.DOM_GRID, ci, si, rep)))
                    names.append(f"grid_c{cap:g}_{sname}_r{rep}.csv")
        for trace, name in zip(_synthesize_many(pairs, cfg, args.jobs), names):
            write(trace, name)
    elif args.what == "calibration":
        traces = rg.build_calibration_set(cfg.sim, cfg.regimes, cfg.seed)
        for i, trace in enumerate(traces):
            write(trace, f"calib_{i:04d}.csv")
    elif args.what == "corpus":
        if args.capacity is None:
            raise CliError("generate corpus requires --capacity")
        from .rng import derive_stream
        traces = rg.build_single_capacity_corpus(
            args.capacity, args.n_traces, derive_stream(cfg.seed, rg.DOM_CORPUS),
            cfg.sim, cfg.regimes)
        for i, trace in enumerate(traces):
            write(trace, f"corpus_c{args.capacity:g}_{i:04d}.csv")
    _finish_run(out_dir, cfg, artifacts, f"generate {args.what}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    ckpt = train_tgdin(cfg, out_dir)
    log.info("trained tgdin: calibration RMSE %.4f Mbps",
             ckpt.provenance["calibration_rmse_mbps"])
    _finish_run(out_dir, cfg,
                [out_dir / "tgdin.ckpt", out_dir / "train_log.jsonl"], "train")
    return 0


def cmd_train_baseline(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = {"gru-lstm": "gru_lstm", "attn": "attn_direct"}[args.kind]
    if args.corpus:
        corpus = _load_traces(args.corpus)
    else:
        from .rng import derive_stream
        corpus = rg.build_single_capacity_corpus(
            args.capacity, cfg.baselines.corpus_traces,
            derive_stream(cfg.seed, rg.DOM_CORPUS), cfg.sim, cfg.regimes)
    ckpt = train_direct(kind, corpus, cfg)
    path = out_dir / f"{kind}_c{args.capacity:g}.ckpt"
    save_checkpoint(ckpt, path)
    _finish_run(out_dir, cfg, [path], f"train-baseline {args.kind}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(args.checkpoint)
    traces = [t for t in _load_traces(args.grid)
              if t.meta is not None
              and abs(t.meta.capacity_base_mbps - args.target) < 1e-9]
    if not traces:
        raise CliError(f"no grid traces at target capacity {args.target}")
    ft = FinetuneSpec(budget_frac=args.budget, mode=args.mode,
                      target_capacity_mbps=args.target,
                      source_checkpoint_id=str(args.checkpoint))
    adapted = finetune_direct(ckpt, ft, traces, cfg)
    path = out_dir / (f"{adapted.spec.kind}_ft_c{args.target:g}"
                      f"_{args.mode}_{args.budget:g}.ckpt")
    save_checkpoint(adapted, path)
    _finish_run(out_dir, cfg, [path], "finetune")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = _load_traces(args.grid)
    if args.what == "cross-capacity":
        if not args.checkpoints:
            raise CliError("evaluate cross-capacity requires --checkpoints "
                           "(missing artifact: model checkpoint)")
        models = {}
        for p in args.checkpoints:
            if not Path(p).exists():
                raise CliError(f"missing artifact: checkpoint {p}")
            ck = load_checkpoint(p)
            models[ck.provenance.get("label") or Path(p).stem] = ck
        records = run_cross_capacity(models, grid, cfg.sim)
        name = "cross_capacity"
    else:
        if not args.tgdin or not args.sources:
            raise CliError("evaluate finetune-study requires --tgdin and "
                           "--sources (missing artifact: model checkpoint)")
        tgdin_ckpt = load_checkpoint(args.tgdin)
        sources = {}
        for p in args.sources:
            ck = load_checkpoint(p)
            sources[ck.spec.kind] = ck
        records = run_finetune_study(sources, tgdin_ckpt, grid,
                                     tuple(args.budgets), tuple(args.modes),
                                     cfg)
        name = "finetune_study"
    from .report import records_to_csv
    path = out_dir / f"metrics_{name}.csv"
    path.write_text(records_to_csv(records))
    _finish_run(out_dir, cfg, [path], f"evaluate {args.what}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not Path(args.checkpoint).exists():
        raise CliError(f"missing artifact: checkpoint {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    trace = read_trace_csv(args.trace, strict=not args.lax)
    d_hat = infer_demand(ckpt, trace)
    k = ckpt.spec.k_windows
    U = d_hat.shape[1]
    cols = ["t_index"] + [f"demand_hat_u{u}_mbps" for u in range(U)]
    lines = [",".join(cols)]
    for i in range(d_hat.shape[0]):
        lines.append(",".join([str(k - 1 + i)] +
                              [repr(float(v)) for v in d_hat[i]]))
    path = out_dir / "demand.csv"
    path.write_text("\n".join(lines) + "\n")
    _finish_run(out_dir, cfg, [path], "infer")
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts, uid, size = read_packet_csv(args.packets)
    thr, dropped = aggregate_packets(ts, uid, size, cfg.sim.dt_s,
                                     cfg.sim.n_users, args.duration)
    offered = None
    if args.offered:
        off_trace = read_trace_csv(args.offered, strict=False)
        offered = off_trace.throughput_mbps
    trace = reconstruct_features(thr, args.capacity, cfg.sim, offered)
    path = out_dir / "ingested.csv"
    write_trace_csv(trace, path, cfg.sim.dt_s)
    log.info("ingested %d windows (%d tail bytes dropped)",
             trace.n_windows, dropped)
    _finish_run(out_dir, cfg, [path], "ingest")
    return 0


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    records = read_metrics_csv(args.metrics)
    name = Path(args.metrics).stem.replace("metrics_", "")
    written = emit_report({name: records}, out_dir)
    _finish_run(out_dir, cfg, list(written), "report")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tgdin",
        description="Latent demand inference: generation, training, "
                    "evaluation, ingestion")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="config JSON path")
    common.add_argument("--seed", type=int, default=None,
                        help="override root seed")
    common.add_argument("--out", required=True, help="run output directory")
    common.add_argument("--quiet", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", parents=[common],
                       help="write synthetic trace sets")
    g.add_argument("what", choices=["grid", "calibration", "corpus"])
    g.add_argument("--capacity", type=float, default=None)
    g.add_argument("--n-traces", type=int, default=200)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", parents=[common],
                       help="train the demand-inference model")
    t.add_argument("what", nargs="?", choices=["tgdin"], default="tgdin")
    t.set_defaults(fn=cmd_train)

    tb = sub.add_parser("train-baseline", parents=[common],
                        help="train a direct predictor at one capacity")
    tb.add_argument("kind", choices=["gru-lstm", "attn"])
    tb.add_argument("--capacity", type=float, required=True)
    tb.add_argument("--corpus", default=None,
                    help="trace dir (default: generate internally)")
    tb.set_defaults(fn=cmd_train_baseline)

    f = sub.add_parser("finetune", parents=[common],
                       help="target-adapt a trained baseline")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--grid", required=True, help="test grid trace dir")
    f.add_argument("--target", type=float, required=True)
    f.add_argument("--budget", type=float, default=0.05)
    f.add_argument("--mode", choices=["full", "last_layer"], default="full")
    f.set_defaults(fn=cmd_finetune)

    e = sub.add_parser("evaluate", parents=[common],
                       help="run a study over a generated grid")
    e.add_argument("what", choices=["cross-capacity", "finetune-study"])
    e.add_argument("--grid", required=True)
    e.add_argument("--checkpoints", nargs="*", default=[])
    e.add_argument("--tgdin", default=None)
    e.add_argument("--sources", nargs="*", default=[])
    e.add_argument("--budgets", nargs="*", type=float, default=[0.01, 0.05])
    e.add_argument("--modes", nargs="*", default=["full", "last_layer"])
    e.set_defaults(fn=cmd_evaluate)

    i = sub.add_parser("infer", parents=[common],
                       help="per-window demand estimates for a trace")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--trace", required=True)
    i.add_argument("--lax", action="store_true",
                   help="tolerate unknown trace columns")
    i.set_defaults(fn=cmd_infer)

    n = sub.add_parser("ingest", parents=[common],
                       help="aggregate a packet CSV into a trace")
    n.add_argument("--packets", required=True)
    n.add_argument("--capacity", type=float, required=True)
    n.add_argument("--duration", type=float, default=None)
    n.add_argument("--offered", default=None,
                   help="optional window CSV with offered rates")
    n.set_defaults(fn=cmd_ingest)

    r = sub.add_parser("report", parents=[common],
                       help="render charts from a metrics CSV")
    r.add_argument("--metrics", required=True)
    r.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (CliError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
