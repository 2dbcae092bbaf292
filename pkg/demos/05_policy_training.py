"""Train a small allocation policy against a clone table and inspect it.

The policy is a graph network over the four seats: per-seat offer shares plus
a retained share, trained by gradient ascent on rollout surplus through the
differentiable game.
"""
import json
from dataclasses import replace

import numpy as np

from commonpool import nnet
from commonpool.game import GameConfig, run_episode
from commonpool.mechanisms import WeightedMechanism
from commonpool.planner import (NeuralMechanism, PlannerConfig, desk_planner_spec,
                                init_planner, select_planner_checkpoint,
                                train_planner)
from commonpool.players import bc1_config, ensemble_draw, init_clone
from commonpool.seeding import derive_seed, substream

config = GameConfig()
clone_config = bc1_config()
# two random-weight "clones" keep the demo self-contained; in the pipeline
# these come from behavior cloning (see 04)
members = [init_clone(substream(5, "member", i), clone_config) for i in range(2)]

planner_config = PlannerConfig(horizon=10, preset="demo")
n = sum(t.data.size for _, t in nnet.leaves(init_planner(np.random.default_rng(0), planner_config)))
print(f"policy network: {n} parameters, horizon {planner_config.horizon}")

spec = replace(desk_planner_spec(total_steps=60, batch_size=8), checkpoint_every=20)
checkpoints, history = train_planner(planner_config, members, clone_config,
                                     config, spec, seed=derive_seed(5, "train"),
                                     metrics_path="/tmp/demo_policy_metrics.jsonl")
first, last = history[0][1], history[-1][1]
print(f"objective over {len(history)} steps: {first:.1f} -> {last:.1f}")

with open("/tmp/demo_policy_metrics.jsonl") as fh:
    row = json.loads(fh.readlines()[-1])
print(f"last metrics row: surplus {row['surplus']:.1f}, gini {row['gini']:.3f}, "
      f"lr {row['lr']:.1e}")

# -- checkpoint selection plays evaluation games -------------------------

step, params, scores = select_planner_checkpoint(
    checkpoints, planner_config, members, clone_config, config,
    seed=derive_seed(5, "select"), n_episodes=4)
print(f"\ncheckpoint scores {dict(sorted(scores.items()))} -> kept step {step}")

# -- the trained policy is a mechanism like any other --------------------

short = GameConfig(max_rounds=10)
log = run_episode(short, NeuralMechanism(params, planner_config),
                  ensemble_draw(members, config.num_players, substream(5, "draw"),
                                mode="fixed_slots", clone_config=clone_config),
                  seed=17)
r0 = log.rounds[0]
print(f"round 0 offers {np.round(r0.offers, 1)} + retained {r0.retained:.1f} "
      f"(equal opening by symmetry)")
baseline = run_episode(short, WeightedMechanism(w=1.0),
                       ensemble_draw(members, config.num_players, substream(5, "draw"),
                                     mode="fixed_slots", clone_config=clone_config),
                       seed=17)
print(f"10-round surplus {log.total_surplus():.1f} vs equal-split "
      f"{baseline.total_surplus():.1f} on the same seats and seed")
