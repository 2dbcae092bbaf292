"""Declarative experiment configuration.

One JSON file with typed keys describes a whole run; every pipeline stage
reads the same file, so a run is reproducible from (config file, seed)
alone.  Schema — all keys optional, unknown keys rejected:

    seed                 int     root seed; every stage derives a named substream
    out_dir              str     artifact root directory
    preset               str     "desk_scale" | "paper_exact"
    game                 object  game-rule overrides (num_players, initial_pool, ...)
    mechanisms           array   tagged mechanism specs for simulate / evaluate
    population           object  {"archetypes": [spec, ...], "weights": [...]}
    games_per_condition  int     episodes per mechanism in simulate / evaluate
    corpus               object  {"total": int, "arms": {name: int}, "retention_max": float}
    bc                   object  {"steps", "batch", "runs", "n_select",
                                  "holdout_fraction", "generation"}
    planner              object  {"steps", "batch", "horizon", "variant",
                                  "estimator", "gini_loss_weight", "select_episodes"}
    corpus_dir           str     read game logs from here instead of out_dir/corpus
    bc_dir               str     read the clone ensemble from here instead of out_dir/bc
    planner_checkpoint   str     evaluate/probe this file instead of out_dir/planner/planner.ckpt

The file is data, not code: no expressions, no includes, no environment
lookups.  Typos fail loudly (`ConfigError`) instead of silently taking a
default.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace as dc_replace

from .game import GameConfig
from .nnet import Schedule
from .planner import PlannerConfig, PlannerTrainSpec, m1_config, m1_train_spec
from .players import (CloneConfig, CloneTrainSpec, bc1_config, bc1_train_spec,
                      bc2_config, bc2_train_spec, desk_train_spec)


class ConfigError(ValueError):
    """Config file rejected; message lists every offending key."""


PRESET_NAMES = ("desk_scale", "paper_exact")

DEFAULT_MECHANISMS = (
    {"kind": "weighted", "w": 1.0},
    {"kind": "weighted", "w": 0.0},
    {"kind": "interpolating", "k": 22.0},
)

# Mixture of scripted archetypes used wherever a config does not pin its own
# population: mostly reciprocators, a minority of defectors and noise.
DEFAULT_POPULATION = {
    "archetypes": (
        {"kind": "sustainer"},
        {"kind": "conditional_cooperator"},
        {"kind": "tit_for_tat"},
        {"kind": "free_rider"},
        {"kind": "uniform_random"},
    ),
    "weights": (0.3, 0.3, 0.2, 0.1, 0.1),
}

_KNOWN_KEYS = {"seed", "out_dir", "preset", "game", "mechanisms", "population",
               "games_per_condition", "corpus", "bc", "planner",
               "corpus_dir", "bc_dir", "planner_checkpoint"}
_CORPUS_KEYS = {"total", "arms", "retention_max"}
_BC_KEYS = {"steps", "batch", "runs", "n_select", "holdout_fraction", "generation"}
_PLANNER_KEYS = {"steps", "batch", "horizon", "variant", "estimator",
                 "gini_loss_weight", "select_episodes"}
_POPULATION_KEYS = {"archetypes", "weights"}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/desk"
    preset: str = "desk_scale"
    game: GameConfig = field(default_factory=GameConfig)
    mechanisms: tuple = DEFAULT_MECHANISMS
    population: dict = field(default_factory=lambda: dict(DEFAULT_POPULATION))
    games_per_condition: int | None = None
    corpus: dict = field(default_factory=dict)
    bc: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    corpus_dir: str | None = None
    bc_dir: str | None = None
    planner_checkpoint: str | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "preset": self.preset,
            "game": self.game.to_dict(),
            "mechanisms": [dict(m) for m in self.mechanisms],
            "population": {"archetypes": [dict(a) for a in self.population["archetypes"]],
                           "weights": list(self.population["weights"])},
            "games_per_condition": self.games_per_condition,
            "corpus": dict(self.corpus),
            "bc": dict(self.bc),
            "planner": dict(self.planner),
            "corpus_dir": self.corpus_dir,
            "bc_dir": self.bc_dir,
            "planner_checkpoint": self.planner_checkpoint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        errors: list[str] = []
        if not isinstance(d, dict):
            raise ConfigError(f"config root must be an object, got {type(d).__name__}")
        for k in sorted(set(d) - _KNOWN_KEYS):
            errors.append(f"unknown key '{k}'")

        def take(key, types, default, check=None):
            if key not in d or d[key] is None:
                return default
            v = d[key]
            # bool is an int subclass; reject it where an int is expected
            if not isinstance(v, types) or (int in _astuple(types) and isinstance(v, bool)):
                errors.append(f"'{key}': expected {_typename(types)}, got {type(v).__name__}")
                return default
            if check is not None:
                msg = check(v)
                if msg:
                    errors.append(f"'{key}': {msg}")
                    return default
            return v

        seed = take("seed", int, 0, lambda v: None if v >= 0 else "must be >= 0")
        out_dir = take("out_dir", str, "runs/desk")
        preset = take("preset", str, "desk_scale",
                      lambda v: None if v in PRESET_NAMES else f"must be one of {PRESET_NAMES}")
        games = take("games_per_condition", int, None,
                     lambda v: None if v >= 0 else "must be >= 0")

        game = GameConfig()
        if "game" in d and d["game"] is not None:
            if not isinstance(d["game"], dict):
                errors.append(f"'game': expected object, got {type(d['game']).__name__}")
            else:
                try:
                    game = GameConfig.from_dict(d["game"])
                except (TypeError, ValueError, KeyError) as e:
                    errors.append(f"'game': {e}")

        mechanisms = tuple(dict(m) for m in DEFAULT_MECHANISMS)
        if "mechanisms" in d and d["mechanisms"] is not None:
            v = d["mechanisms"]
            if not isinstance(v, list) or not all(isinstance(m, dict) and "kind" in m for m in v):
                errors.append("'mechanisms': expected array of objects each with a 'kind' key")
            elif not v:
                errors.append("'mechanisms': must not be empty")
            else:
                mechanisms = tuple(dict(m) for m in v)

        population = {"archetypes": tuple(dict(a) for a in DEFAULT_POPULATION["archetypes"]),
                      "weights": tuple(DEFAULT_POPULATION["weights"])}
        if "population" in d and d["population"] is not None:
            v = d["population"]
            bad = (not isinstance(v, dict) or set(v) - _POPULATION_KEYS
                   or not isinstance(v.get("archetypes"), list)
                   or not all(isinstance(a, dict) and "kind" in a for a in v.get("archetypes", [])))
            if bad:
                errors.append("'population': expected {'archetypes': [spec, ...], 'weights': [...]}")
            else:
                arch = tuple(dict(a) for a in v["archetypes"])
                w = tuple(float(x) for x in v.get("weights", [1.0] * len(arch)))
                if len(w) != len(arch):
                    errors.append("'population': weights and archetypes length mismatch")
                elif not arch:
                    errors.append("'population': archetypes must not be empty")
                elif min(w) < 0 or sum(w) <= 0:
                    errors.append("'population': weights must be nonnegative and sum > 0")
                else:
                    population = {"archetypes": arch, "weights": w}

        def take_section(key, known):
            if key not in d or d[key] is None:
                return {}
            v = d[key]
            if not isinstance(v, dict):
                errors.append(f"'{key}': expected object, got {type(v).__name__}")
                return {}
            for k in sorted(set(v) - known):
                errors.append(f"'{key}.{k}': unknown key")
            return {k: v[k] for k in v if k in known}

        corpus = take_section("corpus", _CORPUS_KEYS)
        bc = take_section("bc", _BC_KEYS)
        planner = take_section("planner", _PLANNER_KEYS)

        corpus_dir = take("corpus_dir", str, None)
        bc_dir = take("bc_dir", str, None)
        planner_ckpt = take("planner_checkpoint", str, None)

        if errors:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
        return cls(seed=seed, out_dir=out_dir, preset=preset, game=game,
                   mechanisms=mechanisms, population=population,
                   games_per_condition=games, corpus=corpus, bc=bc,
                   planner=planner, corpus_dir=corpus_dir, bc_dir=bc_dir,
                   planner_checkpoint=planner_ckpt)

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None,
                       preset: str | None = None) -> "ExperimentConfig":
        """Apply command-line overrides on top of the file values."""
        kw = {}
        if seed is not None:
            kw["seed"] = seed
        if out_dir is not None:
            kw["out_dir"] = out_dir
        if preset is not None:
            if preset not in PRESET_NAMES:
                raise ConfigError(f"preset must be one of {PRESET_NAMES}, got '{preset}'")
            kw["preset"] = preset
        return dc_replace(self, **kw) if kw else self


def _astuple(types):
    return types if isinstance(types, tuple) else (types,)


def _typename(types):
    return "/".join(t.__name__ for t in _astuple(types))


def load_experiment_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON (line {e.lineno}, column {e.colno}: {e.msg})")
    return ExperimentConfig.from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the fully-resolved config (defaults included)."""
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# -- resolved stage plans ------------------------------------------------
#
# A preset fixes the scale of every stage; the per-stage config sections
# override individual knobs.  "paper_exact" runs every stage at full size;
# "desk_scale" finishes the whole pipeline in minutes on one core.


@dataclass(frozen=True)
class CorpusPlan:
    total: int
    arms: dict          # arm name -> game count; values sum to total
    retention_max: float = 0.4


@dataclass(frozen=True)
class BCPlan:
    clone_config: CloneConfig
    spec: CloneTrainSpec
    runs: int
    n_select: int
    holdout_fraction: float
    score_episodes: int    # episodes per baseline when ranking candidates


@dataclass(frozen=True)
class PlannerPlan:
    planner_config: PlannerConfig
    spec: PlannerTrainSpec
    gini_loss_weight: float
    select_episodes: int


def corpus_plan(cfg: ExperimentConfig) -> CorpusPlan:
    if cfg.preset == "paper_exact":
        total, arms = 537, {"random": 36, "varying_w": 303, "prototype_mixture": 198}
    else:
        total, arms = 12, {"random": 2, "varying_w": 6, "prototype_mixture": 4}
    total = int(cfg.corpus.get("total", total))
    if "arms" in cfg.corpus:
        arms = {str(k): int(v) for k, v in cfg.corpus["arms"].items()}
    elif total != sum(arms.values()):
        # keep the random arm small and split the rest ~60/40 between the
        # varying-w and mixture arms, mirroring the default proportions
        n_rand = max(1, round(total * 36 / 537)) if total else 0
        n_w = round((total - n_rand) * 303 / 501) if total else 0
        arms = {"random": n_rand, "varying_w": n_w,
                "prototype_mixture": total - n_rand - n_w}
    if sum(arms.values()) != total:
        raise ConfigError(f"corpus arms {arms} sum to {sum(arms.values())}, not total {total}")
    if any(v < 0 for v in arms.values()) or total < 0:
        raise ConfigError("corpus counts must be nonnegative")
    return CorpusPlan(total=total, arms=arms,
                      retention_max=float(cfg.corpus.get("retention_max", 0.4)))


def bc_plan(cfg: ExperimentConfig) -> BCPlan:
    gen = int(cfg.bc.get("generation", 1))
    if gen not in (1, 2):
        raise ConfigError(f"bc.generation must be 1 or 2, got {gen}")
    clone_cfg = bc1_config() if gen == 1 else bc2_config()
    if cfg.preset == "paper_exact":
        spec = bc1_train_spec() if gen == 1 else bc2_train_spec()
        runs, score_eps = 2, 40
    else:
        spec = desk_train_spec()
        runs, score_eps = 1, 8
    if "steps" in cfg.bc or "batch" in cfg.bc:
        spec = spec.scaled(int(cfg.bc.get("steps", spec.steps)),
                           int(cfg.bc.get("batch", spec.batch)))
    runs = int(cfg.bc.get("runs", runs))
    if runs < 1:
        raise ConfigError("bc.runs must be >= 1")
    return BCPlan(clone_config=clone_cfg, spec=spec, runs=runs,
                  n_select=int(cfg.bc.get("n_select", 4)),
                  holdout_fraction=float(cfg.bc.get("holdout_fraction", 0.2)),
                  score_episodes=score_eps)


def planner_plan(cfg: ExperimentConfig) -> PlannerPlan:
    from .planner import desk_planner_spec

    pc = m1_config()
    if cfg.preset == "paper_exact":
        spec, select_eps = m1_train_spec(), 40
    else:
        pc = dc_replace(pc, horizon=10, preset="desk")
        spec, select_eps = desk_planner_spec(), 8
    over = {}
    if "horizon" in cfg.planner:
        over["horizon"] = int(cfg.planner["horizon"])
    if "variant" in cfg.planner:
        over["variant"] = str(cfg.planner["variant"])
    if "estimator" in cfg.planner:
        over["estimator"] = str(cfg.planner["estimator"])
    if over:
        pc = dc_replace(pc, **over)
    if "steps" in cfg.planner or "batch" in cfg.planner:
        steps = int(cfg.planner.get("steps", spec.total_steps))
        spec = dc_replace(spec, total_steps=steps,
                          batch_size=int(cfg.planner.get("batch", spec.batch_size)),
                          checkpoint_every=max(1, steps // 5))
    return PlannerPlan(planner_config=pc, spec=spec,
                       gini_loss_weight=float(cfg.planner.get("gini_loss_weight", 0.0)),
                       select_episodes=int(cfg.planner.get("select_episodes", select_eps)))


def evaluation_games(cfg: ExperimentConfig) -> int:
    if cfg.games_per_condition is not None:
        return cfg.games_per_condition
    return 40 if cfg.preset == "paper_exact" else 16
