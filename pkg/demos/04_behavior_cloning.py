"""Clone a scripted table from its game logs, then let the clones play.

A corpus of logged games becomes per-seat training sequences; a recurrent
network learns to pick the contribution bin each seat chose; the fitted
clones then fill seats in fresh games.
"""
import numpy as np

from commonpool.cli import PopulationSampler, _corpus_mechanism
from commonpool.game import GameConfig, run_episode
from commonpool.mechanisms import WeightedMechanism
from commonpool.players import (bc1_config, build_dataset, desk_train_spec,
                                ensemble_draw, evaluate_clone, score_clone,
                                split_dataset, train_clone)
from commonpool.seeding import derive_seed, substream

config = GameConfig()
population = {"archetypes": ({"kind": "sustainer"},
                             {"kind": "conditional_cooperator"}),
              "weights": (0.5, 0.5)}

# -- a small corpus with mechanism diversity -----------------------------

sampler = PopulationSampler(population, config.num_players, derive_seed(3, "pop"))
logs = []
for i, arm in enumerate(["random"] * 2 + ["varying_w"] * 6 + ["prototype_mixture"] * 4):
    mech = _corpus_mechanism(arm, substream(3, "mech", i), retention_max=0.4)
    logs.append(run_episode(config, mech, sampler(), derive_seed(3, "game", i)))
print(f"corpus: {len(logs)} games, {len(logs) * config.num_players} seat-sequences")

clone_config = bc1_config()
dataset = build_dataset(logs, n_bins=clone_config.bins, obs_norm=clone_config.obs_norm)
train_ds, holdout = split_dataset(dataset, 0.2, seed=derive_seed(3, "split"))
print(f"dataset: {dataset.n_records} decisions "
      f"({train_ds.n_records} train / {holdout.n_records} held out)")

# -- fit, watching the held-out numbers ----------------------------------

spec = desk_train_spec(steps=600, batch=32)
checkpoints, history = train_clone(train_ds, clone_config, spec,
                                   seed=derive_seed(3, "fit"))
for step, params in checkpoints:
    rep = evaluate_clone(params, clone_config, holdout)
    print(f"  step {step:4d}: held-out loss {rep['loss']:.3f}, "
          f"bin accuracy {rep['bin_accuracy']:.1%}")

# -- clones at the table -------------------------------------------------

_, best = checkpoints[-1]
players = ensemble_draw([best], config.num_players, substream(3, "draw"),
                        mode="fixed_slots", clone_config=clone_config)
log = run_episode(config, WeightedMechanism(w=1.0), players, seed=9)
print(f"\nall-clone table under the equal split: "
      f"surplus {log.total_surplus():.1f}, "
      f"pool ends at {log.rounds[-1].pool_after:.1f}")

s = score_clone(best, clone_config, config, seed=11, episodes_per_pair=4)
print(f"clone realism score (baseline-vs-random surplus gap): {s:.1f}")
