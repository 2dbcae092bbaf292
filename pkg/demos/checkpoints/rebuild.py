"""Regenerate the committed demo checkpoint from scratch.

Fits a two-member clone ensemble to a reciprocator corpus (seed 7), then
trains the allocation policy against it for 500 steps at full horizon.
Stages resume from an existing work directory, so a partial build picks
up where it left off. Takes a few minutes on one core.
"""
import os
import shutil
import time
from dataclasses import replace as dc_replace

import numpy as np

from commonpool.cli import _load_ensemble, cmd_make_corpus, cmd_train_bc
from commonpool.config import ExperimentConfig
from commonpool.game import run_episode
from commonpool.mechanisms import WeightedMechanism
from commonpool.planner import (NeuralMechanism, desk_planner_spec, m1_config,
                                save_planner, train_planner)
from commonpool.players import ensemble_draw
from commonpool.seeding import derive_seed, substream

HERE = os.path.dirname(os.path.abspath(__file__))
WORK = "/tmp/commonpool_demo_checkpoint_build"
SEED = 7

cfg = ExperimentConfig(
    seed=SEED, out_dir=WORK,
    population={"archetypes": ({"kind": "sustainer"},
                               {"kind": "conditional_cooperator"}),
                "weights": (0.5, 0.5)})

t = time.perf_counter()
if not os.path.exists(os.path.join(WORK, "bc", "member_0.ckpt")):
    cmd_make_corpus(cfg)
    cmd_train_bc(cfg)
members, clone_cfg = _load_ensemble(cfg)
print(f"clone ensemble: {len(members)} members ({time.perf_counter()-t:.1f}s)")

pc = dc_replace(m1_config(), preset="desk")
t = time.perf_counter()
ckpts, _ = train_planner(pc, members, clone_cfg, cfg.game,
                         desk_planner_spec(500, 16),
                         derive_seed(SEED, "planner_train"))
step, params = ckpts[-1]
print(f"policy: {step} steps at horizon {pc.horizon} "
      f"({time.perf_counter()-t:.1f}s)")

for j in range(len(members)):
    shutil.copy2(os.path.join(WORK, "bc", f"member_{j}.ckpt"),
                 os.path.join(HERE, f"member_{j}.ckpt"))
save_planner(os.path.join(HERE, "planner.ckpt"), params, pc, step=step)


def mean_surplus(mech_factory, n=32):
    totals = []
    for g in range(n):
        players = ensemble_draw(members, cfg.game.num_players,
                                substream(SEED, "rebuild_draw", g),
                                mode="fixed_slots", clone_config=clone_cfg)
        log = run_episode(cfg.game, mech_factory(), players,
                          derive_seed(SEED, "rebuild_eval", g))
        totals.append(log.total_surplus())
    return float(np.mean(totals))


trained = mean_surplus(lambda: NeuralMechanism(params, pc))
equal = mean_surplus(lambda: WeightedMechanism(w=1.0))
print(f"sanity on 32 paired games: trained {trained:.1f} vs equal {equal:.1f}")
print(f"wrote member_*.ckpt and planner.ckpt to {HERE}")
