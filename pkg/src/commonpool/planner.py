"""Graph-network allocation policy and the loop that optimizes it.

The policy reads a fully connected player graph (per-node: previous offer,
previous contribution, current pool; global: the pool) and emits p+1 softmax
fractions of the pool — one offer per player plus a retained share.  Training
unrolls whole games against frozen clone ensembles and ascends cumulative
player surplus, optionally penalized by a smoothed inequality term.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import nnet
from .autodiff import ShapeMismatch, Tensor
from .game import GameConfig, Mechanism, run_episode
from .nnet import ParamTree, Schedule
from .players import (NonFiniteLoss, OBS_NORM, CloneConfig,
                      clone_forward, clone_hidden_zero, ensemble_draw)
from .seeding import derive_seed, substream

__all__ = [
    "PlannerConfig", "PlannerTrainSpec", "NeuralMechanism",
    "m1_config", "m2_config", "m1_feedforward_config",
    "m1_train_spec", "m2_train_spec", "desk_planner_spec",
    "init_planner", "planner_forward", "planner_memory_zero",
    "planner_observation", "batched_rollout", "estimate_gradient",
    "smooth_gini", "train_planner", "unroll_and_score",
    "score_planner", "select_planner_checkpoint",
    "save_planner", "load_planner",
]


# -- configuration -------------------------------------------------------


@dataclass(frozen=True)
class PlannerConfig:
    """Architecture and objective knobs for the allocation policy."""

    block_width: int = 32          # every plain FC layer in both graph blocks
    node_memory_size: int = 32     # per-node recurrent width in the second block
    node_head_size: int = 32       # post-memory layer before the scalar node head
    global_head_size: int = 32
    variant: str = "recurrent"     # "recurrent" | "feedforward"
    horizon: int = 40
    estimator: str = "surrogate_pathwise"  # | "score_function"
    gini_loss_weight: float = 0.0
    obs_norm: float = OBS_NORM
    preset: str = "custom"

    def __post_init__(self):
        if self.variant not in ("recurrent", "feedforward"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.estimator not in ("surrogate_pathwise", "score_function"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.gini_loss_weight < 0:
            raise ValueError("gini_loss_weight must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        return cls(**d)


def m1_config(**overrides) -> PlannerConfig:
    return PlannerConfig(preset="m1", **overrides)


def m2_config(**overrides) -> PlannerConfig:
    # wider per-node memory for the second-generation clone population
    return PlannerConfig(node_memory_size=64, preset="m2", **overrides)


def m1_feedforward_config(**overrides) -> PlannerConfig:
    return PlannerConfig(variant="feedforward", preset="m1_ff", **overrides)


@dataclass(frozen=True)
class PlannerTrainSpec:
    batch_size: int = 256
    total_steps: int = 500_000
    schedule: Schedule = Schedule(1e-3, 1e-5, 0.05, 1000)
    checkpoint_every: int = 50_000


def m1_train_spec() -> PlannerTrainSpec:
    return PlannerTrainSpec()


def m2_train_spec() -> PlannerTrainSpec:
    return PlannerTrainSpec(batch_size=1024, total_steps=800_000,
                            schedule=Schedule(1e-5, 1e-5, 0.0, 1000))


def desk_planner_spec(total_steps: int = 1000, batch_size: int = 16) -> PlannerTrainSpec:
    return PlannerTrainSpec(batch_size=batch_size, total_steps=total_steps,
                            schedule=Schedule(1e-3, 1e-5, 0.05, 1000),
                            checkpoint_every=max(1, total_steps // 5))


# -- network -------------------------------------------------------------


def init_planner(rng: np.random.Generator, config: PlannerConfig,
                 num_players: int = 4) -> ParamTree:
    """Two graph blocks; the second ends in scalar node and global heads."""
    w = config.block_width
    d_v, d_u = 3, 1
    block1 = {
        "edge": nnet.init_stack(rng, d_v + d_v + d_u, [w]),
        "node": nnet.init_stack(rng, w + d_v + d_u, [w]),
        "global": nnet.init_stack(rng, w + w + d_u, [w]),
    }
    node_in = w + w + w  # aggregated edges + node + global, all width w
    if config.variant == "recurrent":
        node = {
            "gru": nnet.init_gru(rng, node_in, config.node_memory_size),
            "post": nnet.init_stack(rng, config.node_memory_size,
                                    [config.node_head_size, 1]),
        }
    else:
        # memoryless twin: the recurrent cell swapped for a plain layer of the
        # same width, identical tail
        node = nnet.init_stack(rng, node_in,
                               [config.node_memory_size, config.node_head_size, 1])
    block2 = {
        "edge": nnet.init_stack(rng, 4 * w, [w]),
        "node": node,
        "global": nnet.init_stack(rng, w + 1 + w, [config.global_head_size, 1]),
    }
    return {"block1": block1, "block2": block2}


def planner_memory_zero(config: PlannerConfig, num_players: int,
                        batch: tuple[int, ...] = ()):
    if config.variant != "recurrent":
        return None
    return Tensor(np.zeros(batch + (num_players, config.node_memory_size)))


def planner_forward(params: ParamTree, config: PlannerConfig,
                    node_attrs, global_attrs, memory=None):
    """One round of the policy: (fractions[..., p+1], new_memory).

    Deterministic given inputs; fractions are a softmax so they are positive
    and sum to one.
    """
    nodes = ad.as_tensor(node_attrs)
    glob = ad.as_tensor(global_attrs)
    if nodes.shape[-1] != 3:
        raise ShapeMismatch(f"node attrs must end in 3 features, got {nodes.shape}")
    if glob.shape[-1] != 1:
        raise ShapeMismatch(f"global attrs must end in 1 feature, got {glob.shape}")
    p = nodes.shape[-2]
    g = nnet.GraphBatch.fully_connected(nodes, glob)
    g1, _ = nnet.graph_block(params["block1"], g, edge_acts="relu",
                             node_acts="relu", global_acts="relu")
    if config.variant == "recurrent":
        if memory is None:
            memory = planner_memory_zero(config, p, nodes.shape[:-2])
        g2, new_memory = nnet.graph_block(
            params["block2"], g1, edge_acts="relu",
            node_acts=["relu", "identity"], global_acts=["relu", "identity"],
            node_update="dense_with_memory", node_memory=memory)
    else:
        g2, new_memory = nnet.graph_block(
            params["block2"], g1, edge_acts="relu",
            node_acts=["relu", "relu", "identity"],
            global_acts=["relu", "identity"])
    # p scalar node outputs + 1 scalar global output -> allocation logits
    node_scalars = ad.reshape(g2.node_attrs, nodes.shape[:-2] + (p,))
    logits = ad.concat([node_scalars, g2.global_attrs], axis=-1)
    return ad.softmax(logits, axis=-1), new_memory


def planner_observation(prev_offers, prev_contribs, pool: float,
                        config: PlannerConfig, pool_obs_scale: float = 1.0):
    """Node and global input arrays for one (unbatched) round.

    pool_obs_scale perturbs only what the policy *sees* of the pool — the
    intervention knob; the true pool is untouched.
    """
    prev_offers = np.asarray(prev_offers, dtype=np.float64)
    p = prev_offers.shape[0]
    seen_pool = pool_obs_scale * pool / config.obs_norm
    nodes = np.column_stack([
        prev_offers / config.obs_norm,
        np.asarray(prev_contribs, dtype=np.float64) / config.obs_norm,
        np.full(p, seen_pool),
    ])
    return nodes, np.array([seen_pool])


class NeuralMechanism(Mechanism):
    """Frozen policy wrapped as an allocation mechanism for the game engine."""

    def __init__(self, params: ParamTree, planner_config: PlannerConfig,
                 pool_obs_scale: float = 1.0):
        self.params = nnet.detach_tree(params)
        self.planner_config = planner_config
        self.pool_obs_scale = float(pool_obs_scale)
        self.mechanism_id = f"planner({planner_config.preset})"
        self._memory = None

    def begin_episode(self, config: GameConfig, rng: np.random.Generator) -> None:
        self._memory = planner_memory_zero(self.planner_config, config.num_players)

    def propose(self, state, config: GameConfig):
        nodes, glob = planner_observation(state.prev_offers, state.prev_contribs,
                                          state.pool, self.planner_config,
                                          self.pool_obs_scale)
        fractions, self._memory = planner_forward(
            self.params, self.planner_config, Tensor(nodes), Tensor(glob),
            self._memory)
        p = config.num_players
        offers = fractions.data[:p] * state.pool
        retained = max(0.0, state.pool - float(offers.sum()))
        return offers, retained


# -- checkpoints ---------------------------------------------------------


def save_planner(path, params: ParamTree, config: PlannerConfig,
                 step: int = 0, opt=None) -> None:
    meta = {"kind": "planner", "step": int(step), "config": config.to_dict()}
    nnet.save_checkpoint(path, params, meta=meta, opt=opt)


def load_planner(path):
    """-> (params, PlannerConfig); rejects containers that hold anything else."""
    params, meta, _ = nnet.load_checkpoint(path)
    if not isinstance(meta, dict) or meta.get("kind") != "planner":
        raise nnet.CheckpointError(f"{path} is not a planner checkpoint")
    return params, PlannerConfig.from_dict(meta["config"])


# -- differentiable rollout ----------------------------------------------


def _member_list(ensemble):
    if not ensemble:
        raise ValueError("empty ensemble")
    if isinstance(ensemble[0], tuple):
        return [params for _, params in ensemble]
    return list(ensemble)


@dataclass
class RolloutBatch:
    """Everything a gradient estimator needs from a batch of unrolled games."""

    total_surplus: Tensor          # [B]
    per_player_surplus: Tensor     # [B, p]
    log_prob: Tensor | None        # [B]; only under the sampled-bin estimator
    offers: np.ndarray             # [T, B, p] forward values
    contributions: np.ndarray      # [T, B, p]
    pools: np.ndarray              # [T+1, B]
    assignment: np.ndarray         # [B, p] ensemble member per seat


def _rotation_index(p: int) -> np.ndarray:
    # row i = (i, i+1, ..., i+p-1) mod p: each seat sees itself first
    return (np.arange(p)[:, None] + np.arange(p)[None, :]) % p


def batched_rollout(params: ParamTree, planner_config: PlannerConfig, ensemble,
                    clone_config: CloneConfig, game_config: GameConfig,
                    batch_size: int, seed: int, *, estimator: str | None = None,
                    n_rounds: int | None = None, fixed_fraction: float | None = None,
                    assignment: np.ndarray | None = None) -> RolloutBatch:
    """Unroll ``batch_size`` games planner-vs-clones inside the autodiff graph.

    Clone seats draw with replacement from the ensemble.  ``fixed_fraction``
    replaces the clone head with a deterministic fraction-of-offer response —
    a diagnostic hook that makes the whole rollout smooth, used by the
    finite-difference and closed-form checks.
    """
    members = _member_list(ensemble)
    estimator = estimator or planner_config.estimator
    p = game_config.num_players
    n_bins = clone_config.bins
    horizon = game_config.max_rounds if n_rounds is None else n_rounds
    rng = substream(seed, "planner_rollout")
    if assignment is None:
        assignment = rng.integers(0, len(members), size=(batch_size, p))
    masks = [Tensor((assignment == k).astype(np.float64)[..., None])
             for k in range(len(members))]

    pool = Tensor(np.full(batch_size, game_config.initial_pool))
    prev_offers = Tensor(np.zeros((batch_size, p)))
    prev_contribs = Tensor(np.zeros((batch_size, p)))
    memory = planner_memory_zero(planner_config, p, (batch_size,))
    hidden = clone_hidden_zero(clone_config, (batch_size, p))
    total = Tensor(np.zeros(batch_size))
    per_player = Tensor(np.zeros((batch_size, p)))
    log_prob = Tensor(np.zeros(batch_size)) if estimator == "score_function" else None

    rot = _rotation_index(p)
    norm = 1.0 / planner_config.obs_norm
    offers_trace, contribs_trace = [], []
    pools_trace = [pool.data.copy()]
    bins_arange = Tensor(np.arange(n_bins, dtype=np.float64))

    for _ in range(horizon):
        # two fixed draws per round keep streams aligned across estimators
        bin_draw = rng.random((batch_size, p))
        in_bin = rng.random((batch_size, p))

        pool_col = ad.reshape(pool, (batch_size, 1))
        node_attrs = ad.concat([
            ad.reshape(prev_offers * norm, (batch_size, p, 1)),
            ad.reshape(prev_contribs * norm, (batch_size, p, 1)),
            ad.reshape(pool_col * norm, (batch_size, 1, 1)) * Tensor(np.ones((p, 1))),
        ], axis=-1)
        fractions, memory = planner_forward(params, planner_config, node_attrs,
                                            pool_col * norm, memory)
        offers = fractions[:, :p] * pool_col                       # [B, p]
        pool_mid = ad.maximum(pool - offers.sum(axis=-1), ad.as_tensor(0.0))

        obs = ad.concat([
            ad.take(offers, rot, axis=-1) * norm,
            ad.take(prev_contribs, rot, axis=-1) * norm,
            ad.reshape(pool_col * norm, (batch_size, 1, 1)) * Tensor(np.ones((p, 1))),
        ], axis=-1)                                                # [B, p, 9]

        active = (offers.data >= game_config.exclusion_threshold).astype(np.float64)
        if fixed_fraction is not None:
            contribs = offers * (fixed_fraction * active)
        else:
            logits_parts, hidden_parts = [], []
            for member, mask in zip(members, masks):
                lg, hd = clone_forward(member, obs, hidden)
                logits_parts.append(lg * mask)
                hidden_parts.append(hd * mask)
            logits = logits_parts[0]
            new_hidden = hidden_parts[0]
            for lg, hd in zip(logits_parts[1:], hidden_parts[1:]):
                logits = logits + lg
                new_hidden = new_hidden + hd
            hidden = new_hidden
            probs = ad.softmax(logits, axis=-1)                    # [B, p, N]
            if estimator == "surrogate_pathwise":
                hard = np.argmax(probs.data, axis=-1)              # [B, p]
                f_hard = (hard + in_bin) / n_bins
                f_soft = ((probs * bins_arange).sum(axis=-1) + Tensor(in_bin)) / n_bins
                frac = f_soft - f_soft.detach() + Tensor(f_hard)   # value f_hard, grad f_soft
            elif estimator == "score_function":
                cdf = np.cumsum(probs.data, axis=-1)
                sampled = np.minimum((bin_draw[..., None] >= cdf).sum(axis=-1),
                                     n_bins - 1)
                frac = Tensor((sampled + in_bin) / n_bins)
                lp = ad.log_softmax(logits, axis=-1)
                bi = np.arange(batch_size)[:, None]
                pi = np.arange(p)[None, :]
                chosen = lp[bi, pi, sampled]
                log_prob = log_prob + (chosen * Tensor(active)).sum(axis=-1)
            else:
                raise ValueError(f"unknown estimator {estimator!r}")
            contribs = offers * frac * Tensor(active)

        surplus = offers - contribs
        per_player = per_player + surplus
        total = total + surplus.sum(axis=-1)
        pool = ad.minimum(pool_mid + game_config.growth_multiplier * contribs.sum(axis=-1),
                          ad.as_tensor(game_config.initial_pool))
        prev_offers, prev_contribs = offers, contribs
        offers_trace.append(offers.data.copy())
        contribs_trace.append(contribs.data.copy())
        pools_trace.append(pool.data.copy())

    t_shape = (len(offers_trace), batch_size, p)
    return RolloutBatch(
        total_surplus=total, per_player_surplus=per_player, log_prob=log_prob,
        offers=np.asarray(offers_trace).reshape(t_shape),
        contributions=np.asarray(contribs_trace).reshape(t_shape),
        pools=np.asarray(pools_trace), assignment=assignment)


def smooth_gini(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Differentiable pairwise inequality of x[..., n].

    The absolute value is smoothed; the normalizer is a constant of the graph
    (so the penalty cannot be gamed by inflating the total) with the total
    floored at one resource unit, keeping collapsed economies from blowing
    the ratio up.
    """
    n = x.shape[-1]
    xi = ad.reshape(x, x.shape[:-1] + (n, 1))
    xj = ad.reshape(x, x.shape[:-1] + (1, n))
    num = ad.smooth_abs(xi - xj, eps).sum(axis=-1).sum(axis=-1)
    denom = np.maximum(2.0 * n * x.data.sum(axis=-1), 2.0 * n)
    return num * Tensor(1.0 / denom)


def _objective(rollout: RolloutBatch, gini_loss_weight: float) -> Tensor:
    """Mean per-episode objective as a scalar graph node (to be maximized).

    The inequality penalty rides on the batch's mean surplus (held constant)
    so the conventional weight grid 0..2 spans no-penalty to penalty-dominated
    regardless of the economy's raw scale.
    """
    j = rollout.total_surplus
    if gini_loss_weight > 0.0:
        scale = max(float(rollout.total_surplus.data.mean()), 1.0)
        j = j - (gini_loss_weight * scale) * smooth_gini(rollout.per_player_surplus)
    obj = j.mean()
    if rollout.log_prob is not None:
        returns = j.data
        advantage = returns - returns.mean()   # per-batch baseline
        obj = obj + (rollout.log_prob * Tensor(advantage)).mean()
    return obj


def estimate_gradient(params: ParamTree, rollout: RolloutBatch,
                      gini_loss_weight: float = 0.0):
    """-> (grads, stats) for one ascent step on the rollout's objective."""
    obj = _objective(rollout, gini_loss_weight)
    if not np.isfinite(obj.data):
        raise NonFiniteLoss(f"objective {obj.data!r}")
    nnet.zero_grads(params)
    loss = -obj
    if loss.requires_grad:
        loss.backward()
    grads = nnet.grads_of(params)
    for path, g in nnet.leaves(grads):
        if not np.all(np.isfinite(g)):
            raise nnet.NonFiniteGradient(f"non-finite gradient at {path}")
    stats = {
        "objective": float(obj.data),
        "surplus": float(rollout.total_surplus.data.mean()),
        "gini": float(np.mean([_gini_np(row) for row in rollout.per_player_surplus.data])),
    }
    return grads, stats


def _gini_np(x: np.ndarray) -> float:
    total = x.sum()
    if total <= 0:
        return 0.0
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2 * len(x) * total))


# -- training loop -------------------------------------------------------


def train_planner(planner_config: PlannerConfig, ensemble,
                  clone_config: CloneConfig, game_config: GameConfig,
                  spec: PlannerTrainSpec, seed: int, metrics_path=None,
                  log_every: int = 0):
    """Adam ascent on batched rollouts; returns (checkpoints, history).

    checkpoints: [(step, params)] saved every ``spec.checkpoint_every`` steps
    (the final step always included); history: [(step, objective)].
    metrics_path, if given, receives one JSON line per step with step, lr,
    objective, surplus, and gini — tailable while training runs.
    """
    members = _member_list(ensemble)
    params = nnet.trainable(init_planner(substream(seed, "planner_init"),
                                         planner_config, game_config.num_players))
    opt = nnet.adam_init(params, spec.schedule)
    checkpoints, history = [], []
    sink = open(metrics_path, "w") if metrics_path is not None else None
    try:
        for step in range(1, spec.total_steps + 1):
            rollout = batched_rollout(params, planner_config, members, clone_config,
                                      game_config, spec.batch_size,
                                      derive_seed(seed, "planner_batch", step),
                                      n_rounds=planner_config.horizon)
            grads, stats = estimate_gradient(params, rollout,
                                             planner_config.gini_loss_weight)
            lr = spec.schedule.lr_at(opt.step)
            params, opt = nnet.adam_step(opt, params, grads)
            history.append((step, stats["objective"]))
            if sink is not None:
                sink.write(json.dumps({"step": step, "lr": lr, **stats}) + "\n")
                sink.flush()
            if log_every and step % log_every == 0:
                print(f"step {step}  lr {lr:.2e}  objective {stats['objective']:.3f}")
            if step % spec.checkpoint_every == 0 or step == spec.total_steps:
                snap = nnet.tree_map(lambda t: Tensor(t.data.copy()), params)
                if not checkpoints or checkpoints[-1][0] != step:
                    checkpoints.append((step, snap))
    finally:
        if sink is not None:
            sink.close()
    return checkpoints, history


# -- evaluation and selection --------------------------------------------


def unroll_and_score(params: ParamTree, planner_config: PlannerConfig, ensemble,
                     clone_config: CloneConfig, game_config: GameConfig,
                     seed: int, draw_mode: str = "with_replacement",
                     head_mode: str = "argmax_bin"):
    """Play one full engine game planner-vs-clones.

    -> (total_surplus, EpisodeLog, per_player_surplus).  Engine errors
    propagate: a malformed policy aborts loudly rather than being skipped.
    """
    players = ensemble_draw(ensemble, game_config.num_players,
                            substream(seed, "planner_eval_draw"),
                            mode=draw_mode, clone_config=clone_config,
                            head_mode=head_mode)
    mech = NeuralMechanism(params, planner_config)
    log = run_episode(game_config, mech, players, derive_seed(seed, "planner_eval"))
    return log.total_surplus(), log, log.per_player_surplus()


def score_planner(params: ParamTree, planner_config: PlannerConfig, ensemble,
                  clone_config: CloneConfig, game_config: GameConfig,
                  seed: int, n_episodes: int = 40) -> float:
    """Mean surplus over seeded episodes with fixed-slot clone tables."""
    totals = []
    for ep in range(n_episodes):
        s, _, _ = unroll_and_score(params, planner_config, ensemble, clone_config,
                                   game_config, derive_seed(seed, "planner_select", ep),
                                   draw_mode="fixed_slots")
        totals.append(s)
    return float(np.mean(totals))


def select_planner_checkpoint(checkpoints, planner_config: PlannerConfig, ensemble,
                              clone_config: CloneConfig, game_config: GameConfig,
                              seed: int = 0, n_episodes: int = 40):
    """Pick the checkpoint with the highest mean surplus; ties -> latest step.

    -> (step, params, scores) where scores is {step: mean_surplus}.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    scores = {}
    best = None
    for step, params in checkpoints:
        s = scores[step] = score_planner(params, planner_config, ensemble,
                                         clone_config, game_config, seed,
                                         n_episodes=n_episodes)
        if best is None or (s, step) >= (scores[best[0]], best[0]):
            best = (step, params)
    return best[0], best[1], scores
