"""Batch command-line surface: generate | discover | localize | evaluate |
run | config-init. Every command is deterministic given config + seed."""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__, localize, model, panel, synth, trainer
from .config import RunConfig, load_config, save_config
from .evalmetrics import (AlarmCase, graph_auc, graph_shd, precision_at_avg,
                          precision_at_k, rank_score)
from .numerics import RandomSource


def _out_dir(config: RunConfig, override=None) -> Path:
    root = override or config.out_dir or os.environ.get("RCAKIT_OUT", ".")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


_OVERRIDABLE = ("seed", "r", "lam", "tau", "phi", "psi", "k", "threshold",
                "disable_deconfounding", "disable_scheduling")


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {key: getattr(args, key) for key in _OVERRIDABLE
                 if getattr(args, key, None) is not None}
    if overrides:
        config = RunConfig.from_dict({**config.to_dict(), **overrides})
    return config


# -- stage implementations -----------------------------------------------------


def run_generate(config: RunConfig, out: Path) -> synth.Bundle:
    bundle = synth.make_benchmark(
        d_full=config.d_full, k_mask=config.k_mask, T=config.T,
        expected_degree=config.expected_degree, noise_scale=config.noise_scale,
        conf_ar=config.conf_ar, n_windows=config.n_windows,
        fault_fraction=config.fault_fraction, mechanism=config.mechanism,
        alarms_per_window=config.alarms_per_window, nonlinear=config.nonlinear,
        seed=config.seed)
    panel.write_csv(bundle.panel, out / "metrics.csv")
    synth.save_ground_truth(bundle.truth, out / "ground_truth.json")
    synth.save_alarms(bundle.alarms, out / "alarms.json")
    return bundle


def run_discover(config: RunConfig, out: Path, metrics_path) -> trainer.TrainReport:
    data = panel.read_csv(metrics_path)
    report = trainer.fit(data, config.to_train_config(),
                         log_path=out / "run_log.jsonl")
    model.save_checkpoint(out / "checkpoint.json", report.posterior,
                          report.scm, config.fingerprint())
    graph = model.decompose(report.posterior, config.threshold)
    hard = model.decompose(report.posterior, config.threshold, binarize=True)
    with open(out / "graph.json", "w") as fh:
        json.dump({
            "threshold": config.threshold,
            "D": graph.D.tolist(), "B": graph.B.tolist(),
            "D_binary": hard.D.tolist(), "B_binary": hard.B.tolist(),
            "h_final": report.h_final, "converged": report.converged,
            "names": data.names,
        }, fh)
    with open(out / "weights.csv", "w") as fh:
        fh.write("timestep,weight\n")
        for t, w in enumerate(report.weights.w.tolist()):
            fh.write(f"{t},{w!r}\n")
    return report


def run_localize(config: RunConfig, out: Path, metrics_path, checkpoint_path,
                 alarms_path) -> "list[dict]":
    data = panel.read_csv(metrics_path)
    post, scm, _doc = model.load_checkpoint(checkpoint_path)
    if post.d != data.d:
        raise ValueError(f"checkpoint was trained on {post.d} metrics, "
                         f"panel has {data.d}")
    alarms = synth.load_alarms(alarms_path)
    graph = model.decompose(post, config.threshold,
                            binarize=not config.soft_walk)
    loglik = trainer.loglik_panel(scm, post, data).numpy()
    rng = RandomSource(config.seed)
    records = []
    for idx, alarm in enumerate(alarms):
        if not 0 <= alarm.frontend_node < data.d:
            raise ValueError(f"alarm {idx}: unknown node {alarm.frontend_node}")
        if not config.p <= alarm.t < data.T:
            raise ValueError(f"alarm {idx}: timestep {alarm.t} outside panel")
        report = localize.localize_alarm(
            graph.D, loglik, alarm, rng.fork(f"alarm{idx}").np_gen,
            phi=config.phi, psi=config.psi, n_rw=config.n_rw, k=config.k,
            names=data.names)
        localize.write_ranking_csv(report, out / f"ranking_{idx:03d}.csv")
        records.append(report.to_dict())
    with open(out / "rankings.json", "w") as fh:
        json.dump(records, fh)
    return records


def run_evaluate(rankings_path, truth_path, out: Path) -> dict:
    with open(rankings_path) as fh:
        records = json.load(fh)
    if not records:
        raise ValueError("empty alarm list: nothing to evaluate")
    truth = synth.load_ground_truth(truth_path)
    cases = []
    for rec in records:
        roots = _roots_for_timestep(truth, rec["t"])
        cases.append(AlarmCase(true_roots=roots, ranking=rec["ranking"]))
    report = {
        "cases": len(cases),
        "PR@1": precision_at_k(cases, 1),
        "PR@3": precision_at_k(cases, 3),
        "PR@5": precision_at_k(cases, 5),
        "PR@Avg": precision_at_avg(cases),
        "RankScore": rank_score(cases),
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    keys = sorted(report)
    with open(out / "metrics_report.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        fh.write(",".join(repr(report[k]) for k in keys) + "\n")
    return report


def _roots_for_timestep(truth: synth.GroundTruth, t: int) -> "set[int]":
    for rec in truth.fault_windows:
        if rec["start"] <= t < rec["end"]:
            return set(rec["roots"])
    raise ValueError(f"alarm timestep {t} falls in no labeled fault window")


# -- CLI wrappers ----------------------------------------------------------------


def cmd_config_init(args) -> int:
    config = RunConfig()
    if args.out:
        save_config(config, args.out)
        print(f"wrote defaults to {args.out}")
    else:
        print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config, args.out_dir)
    bundle = run_generate(config, out)
    print(f"generated {bundle.panel.T}x{bundle.panel.d} panel, "
          f"{len(bundle.truth.masked)} masked nodes, "
          f"{len(bundle.truth.fault_windows)} fault windows, "
          f"{len(bundle.alarms)} alarms -> {out}")
    return 0


def cmd_discover(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config, args.out_dir)
    report = run_discover(config, out, args.metrics)
    print(f"discover: {report.rounds_run} rounds, h={report.h_final:.3e}, "
          f"converged={report.converged} -> {out}")
    return 0


def cmd_localize(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config, args.out_dir)
    records = run_localize(config, out, args.metrics, args.checkpoint,
                           args.alarms)
    print(f"localized {len(records)} alarms -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out) if args.out else Path(args.rankings).parent
    report = run_evaluate(args.rankings, args.truth, out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config, args.out_dir)
    started = time.time()

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise SystemExit(f"stage {name!r} failed: {exc}") from exc

    stage("generate", lambda: run_generate(config, out))
    stage("discover", lambda: run_discover(config, out, out / "metrics.csv"))
    stage("localize", lambda: run_localize(
        config, out, out / "metrics.csv", out / "checkpoint.json",
        out / "alarms.json"))
    report = stage("evaluate", lambda: run_evaluate(
        out / "rankings.json", out / "ground_truth.json", out))

    graph_doc = json.loads((out / "graph.json").read_text())
    truth = synth.load_ground_truth(out / "ground_truth.json")
    graph_metrics = {
        "AUC": graph_auc(np.array(graph_doc["D"]), truth.D),
        "SHD": graph_shd(np.array(graph_doc["D_binary"]), truth.D),
    }
    with open(out / "graph_metrics.json", "w") as fh:
        json.dump(graph_metrics, fh, indent=2, sort_keys=True)

    manifest = {
        "config": config.to_dict(),
        "config_fingerprint": config.fingerprint(),
        "seed": config.seed,
        "versions": {"rcakit": __version__, "torch": torch.__version__,
                     "numpy": np.__version__},
        "artifacts": sorted(p.name for p in out.iterdir()
                            if p.is_file() and p.name != "manifest.json"),
        "wall_time": time.time() - started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(json.dumps({**report, **graph_metrics}, indent=2, sort_keys=True))
    print(f"pipeline complete -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcakit",
        description="Root cause analysis on partially observed metric panels")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-dir", help="output directory "
                       "(default: config out_dir, then $RCAKIT_OUT, then .)")
        p.add_argument("--seed", type=int)
        p.add_argument("--r", type=int)
        p.add_argument("--lam", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--phi", type=float)
        p.add_argument("--psi", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--threshold", type=float)
        p.add_argument("--disable-deconfounding", action="store_true",
                       default=None, dest="disable_deconfounding")
        p.add_argument("--disable-scheduling", action="store_true",
                       default=None, dest="disable_scheduling")

    p = sub.add_parser("config-init", help="print or write default config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_config_init)

    p = sub.add_parser("generate", help="write a synthetic dataset bundle")
    add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("discover", help="learn the mixed graph from metrics")
    add_common(p)
    p.add_argument("--metrics", required=True)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("localize", help="rank root causes for alarms")
    add_common(p)
    p.add_argument("--metrics", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--alarms", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="score rankings against ground truth")
    p.add_argument("--rankings", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="generate -> discover -> localize -> evaluate")
    add_common(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if exc.code and not isinstance(exc.code, int):
            print(f"error: {exc.code}", file=sys.stderr)
            return 1
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
