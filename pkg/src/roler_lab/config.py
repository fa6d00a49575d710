"""Experiment configuration: an INI-style ``key = value`` file with sections.

Example::

    [run]
    method = roler
    seed = 0

    [dataset]
    kind = synthetic
    seed = 1
    n_users = 60

Unknown sections or keys are rejected so typos fail loudly.
"""

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .datasets import SyntheticConfig
from .errors import ConfigError
from .policy import A2CConfig, TrackerConfig
from .shaping import METRICS, VARIANTS
from .simulator import QuitConfig
from .world_model import MFConfig

METHODS = (
    "baseline_worldmodel",
    "baseline_ensemble_dorl",
    "roler",
    "roler_without_kr",
    "roler_without_ku",
    "gt_oracle",
)


@dataclass
class DatasetSpec:
    kind: str = "synthetic"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    gt_path: str = ""
    log_path: str = ""
    categories_path: str = ""
    features_path: str = ""
    n_users: int = 0
    n_items: int = 0
    reward_range: tuple = (0.0, 1.0)


@dataclass
class WorldModelSpec:
    mode: str = "noisy_oracle"
    oracle_sigma: float = 0.6
    oracle_bias: float = 0.0
    ensemble_size: int = 1
    mf: MFConfig = field(default_factory=MFConfig)


@dataclass
class ShapingSpec:
    k: int = 9
    metric: str = "cosine"
    variant: str = "multiplicative"
    variant_lambda: float = 1.0
    lambda_e: float = 0.05
    lambda_u: float = 1.0
    feature_source: str = "interaction_history_row"
    include_self: bool = False
    entropy_orders: tuple = (1, 2)


@dataclass
class EvalSpec:
    episodes: int = 50
    final_episodes: int = 200
    greedy: bool = False
    top_p_categories: int = 1
    quit: QuitConfig = field(default_factory=QuitConfig)


@dataclass
class AblateSpec:
    methods: tuple = ("baseline_worldmodel", "roler")
    variants: tuple = ("multiplicative",)
    ks: tuple = (9,)
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass
class BoundSpec:
    n_instances: int = 100
    seed: int = 0
    n_states: int = 5
    n_actions: int = 3
    gamma: float = 0.9
    k: int = 5
    cluster_size: int = 8
    within_cluster_noise: float = 0.05
    observation_noise: float = 0.2
    delta: float = 0.05


@dataclass
class ExperimentConfig:
    method: str = "roler"
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    world_model: WorldModelSpec = field(default_factory=WorldModelSpec)
    shaping: ShapingSpec = field(default_factory=ShapingSpec)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    action_init: str = "gaussian_random"
    action_dim: int = 16
    a2c: A2CConfig = field(default_factory=A2CConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    ablate: AblateSpec = field(default_factory=AblateSpec)
    bound: BoundSpec = field(default_factory=BoundSpec)

    def with_seed(self, seed):
        return replace(self, seed=int(seed), a2c=replace(self.a2c, seed=int(seed)))

    def canonical(self):
        return json.dumps(asdict(self), sort_keys=True, default=str)

    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError("run.method", f"must be one of {', '.join(METHODS)}")
        if self.dataset.kind == "synthetic":
            self.dataset.synthetic.validate()
        elif self.dataset.kind == "files":
            for name in ("gt_path", "log_path", "categories_path"):
                if not getattr(self.dataset, name):
                    raise ConfigError(f"dataset.{name}", "required when kind = files")
            if self.dataset.n_users < 1 or self.dataset.n_items < 1:
                raise ConfigError("dataset.n_users", "n_users and n_items are required when kind = files")
        else:
            raise ConfigError("dataset.kind", "must be synthetic or files")
        if self.world_model.mode not in ("mf", "noisy_oracle"):
            raise ConfigError("world_model.mode", "must be mf or noisy_oracle")
        if self.world_model.ensemble_size < 1:
            raise ConfigError("world_model.ensemble_size", "must be >= 1")
        if self.shaping.metric not in METRICS:
            raise ConfigError("shaping.metric", f"must be one of {METRICS}")
        if self.shaping.variant not in VARIANTS:
            raise ConfigError("shaping.variant", f"must be one of {VARIANTS}")
        if self.shaping.k < 1:
            raise ConfigError("shaping.k", "must be >= 1")
        if self.tracker.kind not in ("average", "attention"):
            raise ConfigError("tracker.kind", "must be average or attention")
        if self.action_init not in ("gaussian_random", "world_model_embeddings"):
            raise ConfigError("actions.init", "must be gaussian_random or world_model_embeddings")
        for m in self.ablate.methods:
            if m not in METHODS:
                raise ConfigError("ablate.methods", f"unknown method {m!r}")
        for v in self.ablate.variants:
            if v not in VARIANTS:
                raise ConfigError("ablate.variants", f"unknown variant {v!r}")
        a = self.a2c
        if min(a.epochs, a.trajectories_per_epoch, a.batch_size, a.hidden) < 1:
            raise ConfigError("a2c.epochs", "epochs, trajectories_per_epoch, batch_size and hidden must be >= 1")
        if not 0.0 <= a.gamma < 1.0:
            raise ConfigError("a2c.gamma", "must lie in [0, 1)")
        if self.eval.episodes < 1 or self.eval.final_episodes < 1:
            raise ConfigError("eval.episodes", "episodes and final_episodes must be >= 1")
        b = self.bound
        if b.n_instances < 1:
            raise ConfigError("bound.n_instances", "must be >= 1")
        if not 0.0 < b.delta < 1.0:
            raise ConfigError("bound.delta", "must lie in (0, 1)")
        if not 0.0 <= b.gamma < 1.0:
            raise ConfigError("bound.gamma", "must lie in [0, 1)")
        return self


# ------------------------------------------------------------------ parsing


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _words(s):
    return tuple(x for x in s.replace(",", " ").split())


def _convert(section, key, raw, kind):
    try:
        if kind is bool:
            return _bool(raw)
        if kind == "floats":
            return _floats(raw)
        if kind == "ints":
            return _ints(raw)
        if kind == "words":
            return _words(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}", str(exc)) from None


# section -> key -> (target path, type)
_SCHEMA = {
    "run": {"method": ("method", str), "seed": ("seed", int)},
    "dataset": {
        "kind": ("dataset.kind", str),
        "seed": ("dataset.synthetic.seed", int),
        "n_users": ("dataset.synthetic.n_users", int),
        "n_items": ("dataset.synthetic.n_items", int),
        "n_clusters": ("dataset.synthetic.n_clusters", int),
        "n_categories": ("dataset.synthetic.n_categories", int),
        "within_cluster_reward_noise": ("dataset.synthetic.within_cluster_reward_noise", float),
        "observation_noise": ("dataset.synthetic.observation_noise", float),
        "log_density": ("dataset.synthetic.log_density", float),
        "reward_range": ("dataset.reward_range", "floats"),
        "gt_path": ("dataset.gt_path", str),
        "log_path": ("dataset.log_path", str),
        "categories_path": ("dataset.categories_path", str),
        "features_path": ("dataset.features_path", str),
        "file_n_users": ("dataset.n_users", int),
        "file_n_items": ("dataset.n_items", int),
    },
    "world_model": {
        "mode": ("world_model.mode", str),
        "oracle_sigma": ("world_model.oracle_sigma", float),
        "oracle_bias": ("world_model.oracle_bias", float),
        "ensemble_size": ("world_model.ensemble_size", int),
        "d": ("world_model.mf.d", int),
        "learning_rate": ("world_model.mf.learning_rate", float),
        "l2": ("world_model.mf.l2", float),
        "epochs": ("world_model.mf.epochs", int),
    },
    "shaping": {
        "k": ("shaping.k", int),
        "metric": ("shaping.metric", str),
        "variant": ("shaping.variant", str),
        "variant_lambda": ("shaping.variant_lambda", float),
        "lambda_e": ("shaping.lambda_e", float),
        "lambda_u": ("shaping.lambda_u", float),
        "feature_source": ("shaping.feature_source", str),
        "include_self": ("shaping.include_self", bool),
        "entropy_orders": ("shaping.entropy_orders", "ints"),
    },
    "tracker": {
        "kind": ("tracker.kind", str),
        "window": ("tracker.window", int),
        "key_dim": ("tracker.key_dim", int),
    },
    "actions": {"init": ("action_init", str), "dim": ("action_dim", int)},
    "a2c": {
        "epochs": ("a2c.epochs", int),
        "trajectories_per_epoch": ("a2c.trajectories_per_epoch", int),
        "batch_size": ("a2c.batch_size", int),
        "gamma": ("a2c.gamma", float),
        "actor_lr": ("a2c.actor_lr", float),
        "critic_lr": ("a2c.critic_lr", float),
        "hidden": ("a2c.hidden", int),
        "entropy_coef": ("a2c.entropy_coef", float),
        "bootstrap": ("a2c.bootstrap", bool),
        "max_grad_norm": ("a2c.max_grad_norm", float),
    },
    "eval": {
        "episodes": ("eval.episodes", int),
        "final_episodes": ("eval.final_episodes", int),
        "greedy": ("eval.greedy", bool),
        "top_p_categories": ("eval.top_p_categories", int),
        "quit_m": ("eval.quit.quit_m", int),
        "quit_n": ("eval.quit.quit_n", int),
        "max_len": ("eval.quit.max_len", int),
    },
    "ablate": {
        "methods": ("ablate.methods", "words"),
        "variants": ("ablate.variants", "words"),
        "ks": ("ablate.ks", "ints"),
        "seeds": ("ablate.seeds", "ints"),
    },
    "bound": {
        "n_instances": ("bound.n_instances", int),
        "seed": ("bound.seed", int),
        "n_states": ("bound.n_states", int),
        "n_actions": ("bound.n_actions", int),
        "gamma": ("bound.gamma", float),
        "k": ("bound.k", int),
        "cluster_size": ("bound.cluster_size", int),
        "within_cluster_noise": ("bound.within_cluster_noise", float),
        "observation_noise": ("bound.observation_noise", float),
        "delta": ("bound.delta", float),
    },
}

# fields every config for a command must set explicitly; seeds are never implicit
REQUIRED = {
    "generate": [("dataset", "seed")],
    "run": [("run", "method"), ("run", "seed")],
    "ablate": [("ablate", "methods"), ("ablate", "seeds")],
    "verify-bound": [("bound", "seed")],
}


def _set_path(cfg, path, value):
    parts = path.split(".")
    objs = [cfg]
    for p in parts[:-1]:
        objs.append(getattr(objs[-1], p))
    new = replace(objs[-1], **{parts[-1]: value})
    for obj, p in zip(reversed(objs[:-1]), reversed(parts[:-1])):
        new = replace(obj, **{p: new})
    return new


def parse_config(text, source="<config>", command="run"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    for section, key in REQUIRED.get(command, []):
        if not parser.has_option(section, key):
            raise ConfigError(f"{section}.{key}", "missing required field")
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(section, "unknown section")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown field")
            path, kind = _SCHEMA[section][key]
            try:
                cfg = _set_path(cfg, path, _convert(section, key, raw, kind))
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", str(exc)) from None
    ds = cfg.dataset
    if command != "verify-bound" and ds.kind == "synthetic" and not parser.has_option("dataset", "seed"):
        raise ConfigError("dataset.seed", "missing required field")
    if len(ds.reward_range) != 2:
        raise ConfigError("dataset.reward_range", "needs two numbers")
    cfg = replace(cfg, dataset=replace(ds, synthetic=replace(ds.synthetic, reward_range=tuple(ds.reward_range))))
    cfg = cfg.with_seed(cfg.seed)
    return cfg.validate()


def load_config(path, command="run"):
    with open(path) as fh:  # OSError propagates: unreadable input is an I/O failure
        text = fh.read()
    return parse_config(text, str(path), command)


def dump_config(cfg):
    """Render a config back to the file format (round-trips through ``parse_config``)."""
    flat = {}
    for section, keys in _SCHEMA.items():
        for key, (path, kind) in keys.items():
            obj = cfg
            for p in path.split("."):
                obj = getattr(obj, p)
            if kind in ("floats", "ints", "words"):
                obj = " ".join(str(x) for x in obj)
            elif kind is bool:
                obj = "true" if obj else "false"
            flat.setdefault(section, {})[key] = str(obj)
    if cfg.dataset.kind != "files":
        for key in ("gt_path", "log_path", "categories_path", "features_path", "file_n_users", "file_n_items"):
            flat["dataset"].pop(key)
    lines = []
    for section, kv in flat.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items() if v != "")
        lines.append("")
    return "\n".join(lines)


def field_names():
    return {s: sorted(k) for s, k in _SCHEMA.items()}

