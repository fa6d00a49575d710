"""Command-line entry point: ``roler-lab {generate,run,ablate,verify-bound}``.

Exit codes: 0 success, 2 config error, 3 training failure, 4 I/O error.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .config import dump_config, load_config
from .errors import ConfigError, ParseError, RolerLabError, TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_IO = 4

logger = logging.getLogger("roler_lab")


def setup_logging():
    name = os.environ.get("ROLER_LAB_LOG", "WARNING").upper()
    level = logging.getLevelName(name)
    bad = not isinstance(level, int)
    logging.basicConfig(level=logging.WARNING if bad else level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if bad:
        logger.warning("ROLER_LAB_LOG=%r is not a log level; using WARNING", name)


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_generate(args):
    """Write a synthetic dataset and its manifest."""
    from .datasets import generate_synthetic, write_categories, write_dense_matrix, write_features, write_interaction_log

    cfg = load_config(args.config, "generate")
    if cfg.dataset.kind != "synthetic":
        raise ConfigError("dataset.kind", "generate needs kind = synthetic")
    syn = cfg.dataset.synthetic
    if args.seed_override is not None:
        syn = replace(syn, seed=args.seed_override)
    gt, log, cats, feats = generate_synthetic(syn)
    out = _outdir(args.out)
    files = {"gt": "gt.txt", "log": "log.csv", "categories": "categories.csv", "features": "features.txt"}
    write_dense_matrix(out / files["gt"], gt)
    write_interaction_log(out / files["log"], log)
    write_categories(out / files["categories"], cats)
    write_features(out / files["features"], feats)
    manifest = {
        "seed": syn.seed,
        "config_hash": cfg.config_hash(),
        "synthetic": asdict(syn),
        "n_users": gt.n_users,
        "n_items": gt.n_items,
        "reward_range": list(gt.reward_range),
        "files": {k: {"path": v, "sha256": _sha256(out / v)} for k, v in files.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} files and manifest.json to {out}")
    return EXIT_OK


def cmd_run(args):
    """Train and evaluate one method with one seed."""
    from .evaluator import write_episodes_csv
    from .experiment import build_world_model, load_data, run_experiment, write_report_csv, write_trace_csv
    from .world_model import save_ensemble

    cfg = load_config(args.config, "run")
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    data = load_data(cfg)
    out = _outdir(args.out)
    res = run_experiment(cfg, data)
    write_trace_csv(out / "trace.csv", res, cfg)
    write_report_csv(out / "report.csv", res, cfg)
    res.policy.save(out / "policy.npz")
    if cfg.method != "gt_oracle":
        save_ensemble(out / "world_model.npz", build_world_model(cfg, data))
    (out / "config.ini").write_text(dump_config(cfg))
    f = res.final
    print(f"{cfg.method} seed={cfg.seed}: R_tra={f.R_tra:.4f} R_each={f.R_each:.4f} "
          f"length={f.length:.2f} MCD={f.mcd:.4f}")
    if args.episodes:
        write_episodes_csv(out / "episodes.csv", res.episodes, [f"config_hash={cfg.config_hash()} seed={cfg.seed}"])
    return EXIT_OK


def cmd_ablate(args):
    """Run a method x variant x k x seed grid."""
    from .experiment import run_ablation, summarize_ablation, write_ablation_csv, write_ablation_summary

    cfg = load_config(args.config, "ablate")
    if args.seed_override is not None:
        cfg = replace(cfg, ablate=replace(cfg.ablate, seeds=(args.seed_override,)))
    out = _outdir(args.out)
    rows = run_ablation(cfg, parallel=args.parallel)
    write_ablation_csv(out / "ablate.csv", rows, cfg)
    summary = summarize_ablation(rows)
    write_ablation_summary(out / "ablate_summary.csv", summary, cfg)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells ({failed} failed), summary in {out / 'ablate_summary.csv'}")
    for s in summary:
        print(f"  {s['method']:24s} {s['variant']:16s} k={s['k']!s:3s} "
              f"R_tra {s['R_tra_mean']:.4f} +- {s['R_tra_std']:.4f}")
    return EXIT_OK


def cmd_verify_bound(args):
    """Check the shaped-reward value bound on random MDPs."""
    from .theory import coverage_experiment, write_bound_csv

    cfg = load_config(args.config, "verify-bound")
    b = cfg.bound
    seed = b.seed if args.seed_override is None else args.seed_override
    kw = {k: v for k, v in asdict(b).items() if k not in ("n_instances", "seed")}
    out = _outdir(args.out)
    rows = coverage_experiment(b.n_instances, seed, parallel=args.parallel, **kw)
    write_bound_csv(out / "bound.csv", rows, [f"config_hash={cfg.config_hash()} seed={seed}"])
    held = sum(r["holds"] for r in rows)
    print(f"bound holds in {held}/{len(rows)} instances")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "ablate": cmd_ablate, "verify-bound": cmd_verify_bound}


def build_parser():
    p = argparse.ArgumentParser(prog="roler-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__)
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--out", required=True, help="output directory (created if missing)")
        sp.add_argument("--seed-override", type=int, default=None, help="replace the configured seed")
        sp.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes")
        if name == "run":
            sp.add_argument("--episodes", action="store_true", help="also dump per-episode CSV")
    return p


def main(argv=None):
    setup_logging()
    args = build_parser().parse_args(argv)
    if args.parallel < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        for k, v in sorted(exc.diagnostics.items()):
            print(f"  {k} = {v}", file=sys.stderr)
        return EXIT_TRAINING
    except RolerLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
