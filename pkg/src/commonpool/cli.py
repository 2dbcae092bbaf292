"""Pipeline driver: every stage of a run behind one console entry point.

Each stage writes into a fixed subdirectory of the config's ``out_dir`` and
leaves a ``manifest.json`` recording the resolved config hash, root seed,
repository revision, schema versions, and a digest of every file written.
Re-running a stage with the same config, seed, and upstream artifacts
reproduces those digests bit for bit.

    simulate       play scripted baselines, write game logs + a metrics report
    make-corpus    build the training corpus of logged games
    train-bc       fit behavior clones on the corpus and keep the best few
    train-planner  train the allocation policy against the clone ensemble
    evaluate       compare mechanisms against the fixed clone table
    sweep-k        trace the pool-exponent grid, one report row per point
    probe-pool     perception-scaling probe of a trained policy
    sweep-params   robustness across pool size x growth multiplier
    serve          run the live-session HTTP service

All stage randomness descends from the single root seed through named
substreams; nothing reads the wall clock or the global RNG.
"""
from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import re
import subprocess
import sys
import warnings
from dataclasses import replace as dc_replace

import numpy as np

from . import analysis
from .analysis import METRICS_COLUMNS, metrics_rows, write_csv
from .config import (ExperimentConfig, ConfigError, bc_plan, config_hash,
                     corpus_plan, evaluation_games, load_experiment_config,
                     planner_plan)
from .game import SCHEMA_VERSION, run_episode, read_episode_log, write_episode_log
from .mechanisms import (InterpolatingMechanism, RandomDirichletMechanism,
                         WeightedMechanism, default_k_grid, mechanism_from_spec,
                         sweep_interpolation_k)
from .planner import load_planner, save_planner, select_planner_checkpoint, train_planner
from .players import (archetype_from_spec, build_dataset, ensemble_draw,
                      evaluate_clone, load_clone, save_clone,
                      select_clone_checkpoints, split_dataset, train_clone)
from .seeding import derive_seed, substream

CHECKPOINT_FORMAT = "CKPT1"


class MissingArtifact(FileNotFoundError):
    """An upstream stage has not produced what this stage needs."""


# -- populations ---------------------------------------------------------


class PopulationSampler:
    """Callable factory seating a table of scripted archetypes.

    Each call draws a fresh composition from a named substream keyed by the
    call counter.  With ``period`` set, the counter wraps so the n-th call of
    every cycle sees the same table — how paired sweeps keep the population
    identical across arms.
    """

    def __init__(self, population: dict, num_players: int, seed: int,
                 period: int | None = None):
        self.specs = [dict(s) for s in population["archetypes"]]
        w = np.asarray(population["weights"], dtype=np.float64)
        self.weights = w / w.sum()
        self.num_players = num_players
        self.seed = seed
        self.period = period
        self.calls = 0

    def __call__(self):
        n = self.calls if self.period is None else self.calls % self.period
        self.calls += 1
        rng = substream(self.seed, "population", n)
        idx = rng.choice(len(self.specs), size=self.num_players, p=self.weights)
        return [archetype_from_spec(self.specs[i]) for i in idx]


# -- manifests -----------------------------------------------------------


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def git_describe() -> str:
    # anchored to the package source, not the caller's cwd, so the recorded
    # revision does not depend on where the command was launched from
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             cwd=os.path.dirname(os.path.abspath(__file__)),
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(stage_dir: str, stage: str, cfg: ExperimentConfig,
                   files: list[str], extra: dict | None = None) -> str:
    """Digest every artifact the stage wrote; no clocks, no hostnames."""
    outputs = {os.path.relpath(p, stage_dir): file_sha256(p) for p in sorted(files)}
    manifest = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "preset": cfg.preset,
        "git": git_describe(),
        "schema_versions": {"episode_log": SCHEMA_VERSION,
                            "checkpoint": CHECKPOINT_FORMAT},
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(stage_dir, "manifest.json")
    with open(path, "w", encoding="utf8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _stage_dir(cfg: ExperimentConfig, name: str) -> str:
    d = os.path.join(cfg.out_dir, name)
    os.makedirs(d, exist_ok=True)
    return d


def _mech_tags(specs) -> list[tuple[str, dict]]:
    """Filesystem-safe directory tag per mechanism, deduplicated in order."""
    seen: dict[str, int] = {}
    out = []
    for spec in specs:
        mid = mechanism_from_spec(spec).mechanism_id
        tag = re.sub(r"[^A-Za-z0-9_.-]+", "_", mid).strip("_")
        seen[tag] = seen.get(tag, 0) + 1
        out.append((tag if seen[tag] == 1 else f"{tag}_{seen[tag]}", dict(spec)))
    return out


def _require_neural_checkpoints(specs) -> None:
    for spec in specs:
        if spec.get("kind") == "neural" and not os.path.exists(spec.get("checkpoint", "")):
            raise MissingArtifact(
                f"planner checkpoint not found: {spec.get('checkpoint')!r} "
                "(run train-planner first, or point 'checkpoint' at an existing file)")


# -- stages --------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig) -> list[str]:
    """Scripted-population games for every configured mechanism.

    Game seeds and table compositions are shared across mechanisms, so the
    runs are paired.  Zero games is a no-op that succeeds with a warning.
    """
    games = evaluation_games(cfg)
    if games == 0:
        warnings.warn("simulate: zero games requested; nothing written")
        return []
    _require_neural_checkpoints(cfg.mechanisms)
    stage = _stage_dir(cfg, "simulate")
    sampler = PopulationSampler(cfg.population, cfg.game.num_players,
                                derive_seed(cfg.seed, "simulate_population"),
                                period=games)
    written = []
    counts = {}
    for tag, spec in _mech_tags(cfg.mechanisms):
        mech_dir = os.path.join(stage, tag)
        os.makedirs(mech_dir, exist_ok=True)
        logs = []
        for g in range(games):
            players = sampler()
            log = run_episode(cfg.game, mechanism_from_spec(spec), players,
                              derive_seed(cfg.seed, "simulate", g),
                              player_ids=[type(p).__name__ for p in players])
            path = os.path.join(mech_dir, f"game_{g:04d}.log")
            write_episode_log(path, log)
            written.append(path)
            logs.append(log)
        report = os.path.join(mech_dir, "metrics.csv")
        write_csv(report, metrics_rows(logs, [f"game_{g:04d}" for g in range(games)]),
                  METRICS_COLUMNS)
        written.append(report)
        counts[tag] = games
    written.append(write_manifest(stage, "simulate", cfg, written,
                                  {"games_per_mechanism": counts}))
    return written


def _corpus_mechanism(arm: str, rng: np.random.Generator, retention_max: float):
    if arm == "random":
        return RandomDirichletMechanism()
    if arm == "varying_w":
        return WeightedMechanism(w=float(rng.uniform(0.0, 1.0)),
                                 retention_frac=float(rng.uniform(0.0, retention_max)))
    if arm == "prototype_mixture":
        # scripted stand-in for early allocation-policy prototypes: half
        # pool-sensitive interpolators over a wide exponent range, the rest
        # split between the equal and proportional poles
        u = rng.uniform()
        if u < 0.5:
            return InterpolatingMechanism(k=float(np.exp(rng.uniform(-5.0, 5.0))))
        return WeightedMechanism(w=1.0 if u < 0.75 else 0.0)
    raise ConfigError(f"unknown corpus arm {arm!r}")


def cmd_make_corpus(cfg: ExperimentConfig) -> list[str]:
    """Logged games for clone training: three arms of mechanism diversity."""
    plan = corpus_plan(cfg)
    if plan.total == 0:
        warnings.warn("make-corpus: zero games requested; nothing written")
        return []
    stage = _stage_dir(cfg, "corpus")
    games_dir = os.path.join(stage, "games")
    os.makedirs(games_dir, exist_ok=True)
    sampler = PopulationSampler(cfg.population, cfg.game.num_players,
                                derive_seed(cfg.seed, "corpus_population"))
    written = []
    i = 0
    for arm in sorted(plan.arms):
        for _ in range(plan.arms[arm]):
            mech = _corpus_mechanism(arm, substream(cfg.seed, "corpus_mech", i),
                                     plan.retention_max)
            players = sampler()
            log = run_episode(cfg.game, mech, players,
                              derive_seed(cfg.seed, "corpus_game", i),
                              player_ids=[type(p).__name__ for p in players])
            path = os.path.join(games_dir, f"game_{i:04d}.log")
            write_episode_log(path, log)
            written.append(path)
            i += 1
    written.append(write_manifest(stage, "make-corpus", cfg, written,
                                  {"total": plan.total, "arms": plan.arms}))
    return written


def _corpus_logs(cfg: ExperimentConfig) -> list:
    d = cfg.corpus_dir or os.path.join(cfg.out_dir, "corpus", "games")
    paths = sorted(glob.glob(os.path.join(d, "*.log")))
    if not paths:
        raise MissingArtifact(f"no game logs under {d} "
                              f"(expected files like {os.path.join(d, 'game_0000.log')}; "
                              "run make-corpus first)")
    return [read_episode_log(p) for p in paths]


def cmd_train_bc(cfg: ExperimentConfig) -> list[str]:
    """Behavior-clone runs on the corpus; the best checkpoints become the
    ensemble, saved one file per member with held-out metrics alongside."""
    plan = bc_plan(cfg)
    logs = _corpus_logs(cfg)
    ds = build_dataset(logs, n_bins=plan.clone_config.bins,
                       obs_norm=plan.clone_config.obs_norm)
    train_ds, holdout = split_dataset(ds, plan.holdout_fraction,
                                      derive_seed(cfg.seed, "bc_split"))
    candidates = []
    for run in range(plan.runs):
        ckpts, _ = train_clone(train_ds, plan.clone_config, plan.spec,
                               derive_seed(cfg.seed, "bc_run", run))
        candidates.extend(ckpts)
    selected = select_clone_checkpoints(candidates, plan.clone_config, cfg.game,
                                        derive_seed(cfg.seed, "bc_select"),
                                        n_select=plan.n_select,
                                        episodes_per_pair=plan.score_episodes)
    stage = _stage_dir(cfg, "bc")
    written, held = [], []
    for j, (step, params) in enumerate(selected):
        path = os.path.join(stage, f"member_{j}.ckpt")
        save_clone(path, params, plan.clone_config, step=step)
        written.append(path)
        rep = evaluate_clone(params, plan.clone_config, holdout)
        held.append({"member": j, "checkpoint_step": step, **rep})
    written.append(write_manifest(stage, "train-bc", cfg, written, {
        "n_sequences": ds.n_sequences, "holdout_sequences": holdout.n_sequences,
        "runs": plan.runs, "holdout_metrics": held,
    }))
    return written


def _load_ensemble(cfg: ExperimentConfig):
    d = cfg.bc_dir or os.path.join(cfg.out_dir, "bc")
    paths = sorted(glob.glob(os.path.join(d, "member_*.ckpt")))
    if not paths:
        raise MissingArtifact(f"no clone ensemble under {d} "
                              f"(expected {os.path.join(d, 'member_0.ckpt')}; "
                              "run train-bc first)")
    members, clone_cfg = [], None
    for p in paths:
        params, c = load_clone(p)
        members.append(params)
        clone_cfg = clone_cfg or c
    return members, clone_cfg


def cmd_train_planner(cfg: ExperimentConfig) -> list[str]:
    """Train the allocation policy against the clone ensemble, then keep the
    checkpoint that scores best on fixed-seat evaluation games."""
    members, clone_cfg = _load_ensemble(cfg)
    plan = planner_plan(cfg)
    pc = dc_replace(plan.planner_config, gini_loss_weight=plan.gini_loss_weight)
    stage = _stage_dir(cfg, "planner")
    metrics_path = os.path.join(stage, "metrics.jsonl")
    ckpts, _ = train_planner(pc, members, clone_cfg, cfg.game, plan.spec,
                             derive_seed(cfg.seed, "planner_train"),
                             metrics_path=metrics_path)
    step, params, scores = select_planner_checkpoint(
        ckpts, pc, members, clone_cfg, cfg.game,
        seed=derive_seed(cfg.seed, "planner_select"),
        n_episodes=plan.select_episodes)
    written = [metrics_path]
    ckpt_dir = os.path.join(stage, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    for s, p in ckpts:
        path = os.path.join(ckpt_dir, f"step_{s:07d}.ckpt")
        save_planner(path, p, pc, step=s)
        written.append(path)
    final = os.path.join(stage, "planner.ckpt")
    save_planner(final, params, pc, step=step)
    written.append(final)
    written.append(write_manifest(stage, "train-planner", cfg, written, {
        "selected_step": step,
        "selection_scores": {str(s): v for s, v in sorted(scores.items())},
    }))
    return written


def cmd_evaluate(cfg: ExperimentConfig) -> list[str]:
    """Paired games of every configured mechanism against the fixed clone
    table; one report file per mechanism plus a summary."""
    games = evaluation_games(cfg)
    if games == 0:
        warnings.warn("evaluate: zero games requested; nothing written")
        return []
    _require_neural_checkpoints(cfg.mechanisms)
    members, clone_cfg = _load_ensemble(cfg)
    stage = _stage_dir(cfg, "evaluate")
    written, summary = [], []
    for tag, spec in _mech_tags(cfg.mechanisms):
        logs = []
        for g in range(games):
            players = ensemble_draw(members, cfg.game.num_players,
                                    substream(cfg.seed, "evaluate_draw", g),
                                    mode="fixed_slots", clone_config=clone_cfg)
            logs.append(run_episode(cfg.game, mechanism_from_spec(spec), players,
                                    derive_seed(cfg.seed, "evaluate", g)))
        report = os.path.join(stage, f"{tag}.csv")
        write_csv(report, metrics_rows(logs, [f"game_{g:04d}" for g in range(games)]),
                  METRICS_COLUMNS)
        written.append(report)
        summary.append({
            "mechanism": logs[0].mechanism_id,
            "games": games,
            "mean_surplus": float(np.mean([lg.total_surplus() for lg in logs])),
            "mean_gini": float(np.mean([analysis.gini(lg.per_player_surplus())
                                        for lg in logs])),
            "sustained_fraction": float(np.mean([
                analysis.game_metrics(lg, cfg.game.exclusion_threshold).sustained
                for lg in logs])),
        })
    summary_path = os.path.join(stage, "summary.csv")
    write_csv(summary_path, summary,
              ["mechanism", "games", "mean_surplus", "mean_gini", "sustained_fraction"])
    written.append(summary_path)
    written.append(write_manifest(stage, "evaluate", cfg, written,
                                  {"games_per_mechanism": games}))
    return written


def cmd_sweep_k(cfg: ExperimentConfig) -> list[str]:
    """One report row per pool-exponent grid point, paired across points."""
    episodes = max(1, evaluation_games(cfg) // 4)
    grid = default_k_grid()
    factory = PopulationSampler(cfg.population, cfg.game.num_players,
                                derive_seed(cfg.seed, "sweep_k_population"),
                                period=episodes)
    rows, best_k = sweep_interpolation_k(grid, factory, cfg.game, episodes,
                                         derive_seed(cfg.seed, "sweep_k"))
    stage = _stage_dir(cfg, "sweep_k")
    report = os.path.join(stage, "rows.csv")
    write_csv(report, rows, ["k", "mean_surplus", "mean_gini"])
    manifest = write_manifest(stage, "sweep-k", cfg, [report], {
        "grid_points": len(grid), "episodes_per_k": episodes, "best_k": float(best_k),
    })
    return [report, manifest]


def cmd_probe_pool(cfg: ExperimentConfig) -> list[str]:
    """Perception-scaling probe of a trained policy checkpoint."""
    ckpt = cfg.planner_checkpoint or os.path.join(cfg.out_dir, "planner", "planner.ckpt")
    if not os.path.exists(ckpt):
        raise MissingArtifact(f"planner checkpoint not found: {ckpt} "
                              "(run train-planner first)")
    members, clone_cfg = _load_ensemble(cfg)
    params, pc = load_planner(ckpt)
    rows = analysis.pool_scaling_probe(params, pc, members, clone_cfg, cfg.game,
                                       episodes_per_coef=max(1, evaluation_games(cfg) // 4),
                                       seed=derive_seed(cfg.seed, "pool_probe"))
    stage = _stage_dir(cfg, "probe_pool")
    report = os.path.join(stage, "rows.csv")
    write_csv(report, rows, ["coef", "mean_offer_gini"])
    manifest = write_manifest(stage, "probe-pool", cfg, [report],
                              {"checkpoint": os.path.abspath(ckpt)})
    return [report, manifest]


def cmd_sweep_params(cfg: ExperimentConfig) -> list[str]:
    """Mechanism robustness across pool size x growth multiplier."""
    _require_neural_checkpoints(cfg.mechanisms)
    pool_grid = (100.0, 200.0, 400.0)
    growth_grid = (1.2, 1.4, 1.6)
    episodes = max(1, evaluation_games(cfg) // 4)
    factories = {tag: (lambda s=spec: mechanism_from_spec(s))
                 for tag, spec in _mech_tags(cfg.mechanisms)}
    period = len(pool_grid) * len(growth_grid) * episodes
    factory = PopulationSampler(cfg.population, cfg.game.num_players,
                                derive_seed(cfg.seed, "sweep_params_population"),
                                period=period)
    rows = analysis.parameter_generalization_sweep(
        factories, factory, cfg.game, pool_grid, growth_grid,
        episodes_per_cell=episodes, seed=derive_seed(cfg.seed, "sweep_params"))
    stage = _stage_dir(cfg, "sweep_params")
    report = os.path.join(stage, "rows.csv")
    write_csv(report, rows, ["mechanism", "pool_max", "growth", "mean_surplus", "mean_gini"])
    manifest = write_manifest(stage, "sweep-params", cfg, [report], {
        "pool_grid": list(pool_grid), "growth_grid": list(growth_grid),
        "episodes_per_cell": episodes,
    })
    return [report, manifest]


def cmd_serve(cfg: ExperimentConfig, host: str = "127.0.0.1", port: int = 8000):
    import uvicorn

    from .service import build_app

    uvicorn.run(build_app(cfg), host=host, port=port)


# -- entry point ---------------------------------------------------------

_STAGES = {
    "simulate": cmd_simulate,
    "make-corpus": cmd_make_corpus,
    "train-bc": cmd_train_bc,
    "train-planner": cmd_train_planner,
    "evaluate": cmd_evaluate,
    "sweep-k": cmd_sweep_k,
    "probe-pool": cmd_probe_pool,
    "sweep-params": cmd_sweep_params,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="path to the JSON experiment config")
    shared.add_argument("--seed", type=int, help="override the config's root seed")
    shared.add_argument("--out", help="override the config's artifact directory")
    shared.add_argument("--preset", choices=["paper_exact", "desk_scale"],
                        help="override the config's run-scale preset")
    parser = argparse.ArgumentParser(
        prog="commonpool",
        description="resource-allocation game pipeline: simulate, train, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _STAGES.items():
        sub.add_parser(name, parents=[shared], help=fn.__doc__.splitlines()[0].lower())
    serve = sub.add_parser("serve", parents=[shared], help="run the live-session service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, out_dir=args.out, preset=args.preset)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "serve":
            cmd_serve(cfg, host=args.host, port=args.port)
            return 0
        written = _STAGES[args.command](cfg)
    except (ConfigError, MissingArtifact) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{args.command}: wrote {len(written)} files under {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
