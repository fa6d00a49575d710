"""End-to-end pipelines: data, world model, reward shaping, A2C training, evaluation."""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from ._seeding import stream
from .config import ExperimentConfig
from .datasets import (
    CategoryMap,
    UserFeatures,
    generate_synthetic,
    history_features,
    load_categories,
    load_dense_matrix,
    load_features,
    load_interaction_log,
)
from .errors import ConfigError, TrainingDiverged
from .evaluator import EvalReport, evaluate
from .policy import Policy, a2c_train, init_actions
from .shaping import (
    UncertaintyVariant,
    baseline_table,
    build_shaped_table,
    entropy_penalty,
    shaped_rmse,
)
from .simulator import RecEnv
from .world_model import WorldModelEnsemble, fit_ensemble, make_noisy_oracle

logger = logging.getLogger(__name__)

TRACE_FIELDS = ["epoch", "R_tra", "R_each", "length", "MCD", "critic_loss", "actor_loss"]
REPORT_FIELDS = ["kind", "method", "seed", "R_tra", "R_tra_std", "R_each", "length", "MCD", "n_episodes",
                 "shaped_rmse"]
ABLATE_FIELDS = ["method", "variant", "k", "seed", "R_tra", "R_each", "length", "MCD", "shaped_rmse", "status"]


class Data(NamedTuple):
    gt: object
    log: object
    cats: CategoryMap
    feats: object  # UserFeatures or None


def load_data(cfg: ExperimentConfig):
    ds = cfg.dataset
    if ds.kind == "synthetic":
        return Data(*generate_synthetic(ds.synthetic))
    rr = tuple(ds.reward_range)
    gt = load_dense_matrix(ds.gt_path, rr, fully_observed=True)
    if gt.shape != (ds.n_users, ds.n_items):
        raise ConfigError("dataset.gt_path", f"matrix is {gt.shape}, expected {(ds.n_users, ds.n_items)}")
    log = load_interaction_log(ds.log_path, ds.n_users, ds.n_items, rr)
    cats = load_categories(ds.categories_path, ds.n_items, log=log)
    feats = load_features(ds.features_path) if ds.features_path else None
    return Data(gt, log, cats, feats)


def build_world_model(cfg, data):
    wm = cfg.world_model
    if wm.mode == "noisy_oracle":
        members = []
        for j in range(wm.ensemble_size):
            members.extend(make_noisy_oracle(data.gt, wm.oracle_sigma, wm.oracle_bias,
                                             seed=_member_seed(cfg.seed, j)).members)
        return WorldModelEnsemble(tuple(members))
    return fit_ensemble(data.log, replace(wm.mf, seed=cfg.seed), n_members=wm.ensemble_size)


def _member_seed(seed, j):
    # member 0 keeps the plain run seed so a one-member ensemble is the plain oracle
    return seed if j == 0 else int(stream(seed, "oracle-member", str(j)).integers(2**31))


def user_features(cfg, data, ens):
    src = cfg.shaping.feature_source
    if src == "interaction_history_row":
        return history_features(data.log)
    if src == "world_model_embedding":
        emb = getattr(ens.members[0], "user_emb", None)
        if emb is None:
            raise ConfigError("shaping.feature_source", "world_model_embedding needs world_model.mode = mf")
        return UserFeatures(np.asarray(emb), "world_model_embedding")
    if src == "raw_static_features":
        if data.feats is None:
            raise ConfigError("shaping.feature_source", "raw_static_features needs dataset features")
        return data.feats
    raise ConfigError("shaping.feature_source", f"unknown source {src!r}")


def build_reward_table(cfg, data, ens=None, method=None):
    """Training reward table for ``method`` (defaults to ``cfg.method``)."""
    method = method or cfg.method
    sh = cfg.shaping
    rr = data.gt.reward_range
    ent = entropy_penalty(data.log, data.cats, tuple(sh.entropy_orders))
    if method == "gt_oracle":
        return baseline_table(data.gt.values, rr, lambda_e=sh.lambda_e, entropy=ent, label=method)
    ens = ens if ens is not None else build_world_model(cfg, data)
    mean = ens.mean_matrix()
    if method == "baseline_worldmodel":
        return baseline_table(mean, rr, lambda_e=sh.lambda_e, entropy=ent, label=method)
    if method == "baseline_ensemble_dorl":
        return baseline_table(mean, rr, p_u=ens.variance_matrix(), lambda_u=sh.lambda_u, lambda_e=sh.lambda_e,
                              entropy=ent, label=method)
    feats = user_features(cfg, data, ens)
    variant = UncertaintyVariant(sh.variant, sh.variant_lambda)
    knn = build_shaped_table(data.log, feats, sh.k, mean, sh.metric, variant, sh.lambda_e, ent,
                             include_self=sh.include_self, use_uncertainty=(method == "roler"), label=method)
    if method == "roler":
        return knn
    if method == "roler_without_ku":
        # kNN reward, world-model uncertainty
        table = baseline_table(knn.r_tilde, rr, p_u=ens.variance_matrix(), lambda_u=sh.lambda_u,
                               lambda_e=sh.lambda_e, entropy=ent, label=method)
    elif method == "roler_without_kr":
        # world-model reward, kNN uncertainty
        table = baseline_table(mean, rr, p_u=knn.p_u, lambda_u=sh.lambda_u, lambda_e=sh.lambda_e,
                               entropy=ent, label=method)
    else:
        raise ConfigError("run.method", f"unknown method {method!r}")
    table.neighbor_sets = knn.neighbor_sets
    return table


@dataclass
class RunResult:
    method: str
    seed: int
    trace: list
    final: EvalReport
    across_epochs: dict
    shaped_rmse: float
    table: object
    policy: object
    episodes: list


def run_experiment(cfg: ExperimentConfig, data=None, evaluate_every_epoch=True):
    """Train one method with one seed and evaluate it on ground truth."""
    cfg.validate()
    data = data if data is not None else load_data(cfg)
    ens = None if cfg.method == "gt_oracle" else build_world_model(cfg, data)
    table = build_reward_table(cfg, data, ens)
    rmse = shaped_rmse(table.r_tilde, data.gt)
    logger.info("method %s seed %d: reward table rmse vs ground truth %.4f", cfg.method, cfg.seed, rmse)
    actions = init_actions(ens.members[0] if ens is not None else None, data.gt.n_items, cfg.action_dim,
                           cfg.action_init, cfg.seed)
    state_dim = actions.dim + 1
    tracker = cfg.tracker.build(state_dim, stream(cfg.seed, "tracker", "init"))
    policy = Policy(state_dim, data.gt.n_items, tracker, cfg.a2c.hidden, cfg.a2c.gamma, cfg.seed, actions)
    env = RecEnv(table, data.cats, actions, cfg.tracker.window, cfg.eval.quit)
    users = np.arange(data.gt.n_users)
    ev = cfg.eval

    def per_epoch(pol, epoch):
        rep = evaluate(pol, data.gt, data.cats, users, ev.episodes, ev.quit, seed=_epoch_seed(cfg.seed, epoch),
                       greedy=ev.greedy)
        return {"R_tra": rep.R_tra, "R_each": rep.R_each, "length": rep.length, "MCD": rep.mcd}

    policy, trace = a2c_train(env, policy, cfg.a2c, per_epoch if evaluate_every_epoch else None,
                              log_every=max(1, cfg.a2c.epochs // 10))
    final, episodes = final_evaluation(cfg, data, policy)
    across = {}
    if evaluate_every_epoch:
        across = {k: float(np.mean([row[k] for row in trace])) for k in ("R_tra", "R_each", "length", "MCD")}
    return RunResult(cfg.method, cfg.seed, trace, final, across, rmse, table, policy, episodes)


def _epoch_seed(seed, epoch):
    return int(stream(seed, "epoch-eval", str(epoch)).integers(2**31))


def final_evaluation(cfg, data, policy):
    users = np.arange(data.gt.n_users)
    ev = cfg.eval
    return evaluate(policy, data.gt, data.cats, users, ev.final_episodes, ev.quit,
                    seed=_epoch_seed(cfg.seed, -1), greedy=ev.greedy, return_episodes=True)


# -------------------------------------------------------------- CSV output


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _header(cfg, extra=""):
    return f"# config_hash={cfg.config_hash()} seed={cfg.seed}{extra}\n"


def write_trace_csv(path, result, cfg):
    with open(path, "w", newline="") as fh:
        fh.write(_header(cfg, f" method={result.method}"))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for row in result.trace:
            w.writerow([_fmt(row.get(k, math.nan)) for k in TRACE_FIELDS])


def write_report_csv(path, result, cfg):
    with open(path, "w", newline="") as fh:
        fh.write(_header(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        f = result.final
        w.writerow(["final_epoch", result.method, result.seed, repr(f.R_tra), repr(f.R_tra_std), repr(f.R_each),
                    repr(f.length), repr(f.mcd), f.n_episodes, repr(result.shaped_rmse)])
        if result.across_epochs:
            a = result.across_epochs
            w.writerow(["across_epochs", result.method, result.seed, repr(a["R_tra"]), "", repr(a["R_each"]),
                        repr(a["length"]), repr(a["MCD"]), len(result.trace), repr(result.shaped_rmse)])


# ------------------------------------------------------------------ ablate


def ablation_grid(cfg):
    """Configs for every (method, variant, k, seed) cell; variant and k only vary for kNN methods."""
    ab = cfg.ablate
    cells = []
    for method in ab.methods:
        knn_based = method in ("roler", "roler_without_ku", "roler_without_kr")
        variants = ab.variants if method == "roler" else (cfg.shaping.variant,)
        ks = ab.ks if knn_based else (cfg.shaping.k,)
        for variant in variants:
            for k in ks:
                for seed in ab.seeds:
                    c = replace(cfg, method=method, shaping=replace(cfg.shaping, variant=variant, k=int(k)))
                    cells.append(c.with_seed(seed))
    return cells


def _ablate_cell(cfg):
    base = {"method": cfg.method, "variant": cfg.shaping.variant if cfg.method == "roler" else "",
            "k": cfg.shaping.k if cfg.method.startswith("roler") else "", "seed": cfg.seed}
    try:
        res = run_experiment(cfg, evaluate_every_epoch=False)
    except TrainingDiverged as exc:
        logger.warning("cell %s diverged: %s", base, exc)
        return {**base, "R_tra": math.nan, "R_each": math.nan, "length": math.nan, "MCD": math.nan,
                "shaped_rmse": math.nan, "status": "diverged"}
    f = res.final
    return {**base, "R_tra": f.R_tra, "R_each": f.R_each, "length": f.length, "MCD": f.mcd,
            "shaped_rmse": res.shaped_rmse, "status": "ok"}


def run_ablation(cfg, parallel=1):
    """Run the grid; rows come back in grid order whatever ``parallel`` is."""
    cells = ablation_grid(cfg)
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_ablate_cell, cells))
    return [_ablate_cell(c) for c in cells]


def summarize_ablation(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["variant"], r["k"]), []).append(r)
    out = []
    for (method, variant, k), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        entry = {"method": method, "variant": variant, "k": k, "n_ok": len(ok), "n_failed": len(rs) - len(ok)}
        for key in ("R_tra", "R_each", "length", "MCD"):
            vals = np.array([r[key] for r in ok], dtype=float)
            entry[f"{key}_mean"] = float(vals.mean()) if vals.size else math.nan
            entry[f"{key}_std"] = float(vals.std()) if vals.size else math.nan
        out.append(entry)
    return out


def write_ablation_csv(path, rows, cfg):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATE_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in ABLATE_FIELDS])


def write_ablation_summary(path, summary, cfg):
    fields = ["method", "variant", "k", "n_ok", "n_failed"]
    for key in ("R_tra", "R_each", "length", "MCD"):
        fields += [f"{key}_mean", f"{key}_std"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in summary:
            w.writerow([_fmt(r[k]) for k in fields])
