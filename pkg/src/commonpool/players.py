"""Player models: scripted archetypes and learned behavioral clones.

Clones observe, each round, the offers just made to all four seats, every
player's contribution from the previous round, and the pool level — nine
numbers, normalized, rotated so the focal seat comes first — and emit a
categorical distribution over contribution-fraction bins. A drawn bin is
turned into a contribution by sampling a fraction uniformly inside the bin
and scaling by the offer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import nnet
from .autodiff import Tensor, cross_entropy
from .game import EpisodeLog, GameConfig, Player, PlayerView, SCHEMA_VERSION, run_episode
from .nnet import Schedule
from .seeding import derive_seed, substream

OBS_DIM = 9
OBS_NORM = 200.0


class SchemaVersionMismatch(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


# -- scripted archetypes -------------------------------------------------


class FreeRider(Player):
    """Keeps everything, always."""

    def contribute(self, view: PlayerView) -> float:
        return 0.0


@dataclass
class Sustainer(Player):
    """Returns a fixed fraction of the offer; keep_frac = 1 - 1/m holds the
    pool exactly level under full allocation."""

    keep_frac: float = 1.0 - 1.0 / 1.4

    def contribute(self, view: PlayerView) -> float:
        return (1.0 - self.keep_frac) * view.my_offer


def _ratios(offers: np.ndarray, contribs: np.ndarray, exclude_seat: int | None):
    """Per-player reciprocation ratios c/e from a completed round; players
    with zero offers drop out."""
    vals = []
    for i in range(len(offers)):
        if i == exclude_seat or offers[i] <= 0:
            continue
        vals.append(contribs[i] / offers[i])
    return vals


@dataclass
class ConditionalCooperator(Player):
    """Matches what the rest of the group did last round, scaled and noised."""

    slope: float = 1.0
    noise_sd: float = 0.1
    prior_ratio: float = 1.0 / 1.4

    def begin_episode(self, config, seat, rng):
        self._rng = rng

    def contribute(self, view: PlayerView) -> float:
        noise = self._rng.normal(0.0, self.noise_sd) if self.noise_sd > 0 else 0.0
        others = _ratios(view.prev_offers, view.prev_contribs, view.seat)
        ratio = float(np.mean(others)) if others else self.prior_ratio
        frac = float(np.clip(self.slope * ratio + noise, 0.0, 1.0))
        return frac * view.my_offer


@dataclass
class TitForTat(Player):
    """Mirrors the group's mean reciprocation ratio over a short window."""

    memory_rounds: int = 3
    prior_ratio: float = 1.0 / 1.4

    def begin_episode(self, config, seat, rng):
        self._window: list[float] = []

    def contribute(self, view: PlayerView) -> float:
        if view.t > 0:
            others = _ratios(view.prev_offers, view.prev_contribs, view.seat)
            if others:
                self._window.append(float(np.mean(others)))
                del self._window[:-self.memory_rounds]
        mean = float(np.mean(self._window)) if self._window else self.prior_ratio
        return float(np.clip(mean, 0.0, 1.0)) * view.my_offer


class UniformRandom(Player):
    """Contributes U[0, offer]; also the stand-in for a dropped-out human."""

    def begin_episode(self, config, seat, rng):
        self._rng = rng

    def contribute(self, view: PlayerView) -> float:
        return float(self._rng.uniform(0.0, view.my_offer))


ARCHETYPES = {
    "free_rider": FreeRider,
    "sustainer": Sustainer,
    "conditional_cooperator": ConditionalCooperator,
    "tit_for_tat": TitForTat,
    "uniform_random": UniformRandom,
}


def archetype_from_spec(spec: dict) -> Player:
    kind = spec["kind"]
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    return ARCHETYPES[kind](**kwargs)


# -- observations --------------------------------------------------------


def rotate_self_first(values: np.ndarray, seat: int) -> np.ndarray:
    p = len(values)
    return values[np.arange(seat, seat + p) % p]


def observation_vector(offers: np.ndarray, prev_contribs: np.ndarray,
                       pool: float, seat: int, norm: float = OBS_NORM) -> np.ndarray:
    obs = np.concatenate([rotate_self_first(np.asarray(offers, dtype=np.float64), seat),
                          rotate_self_first(np.asarray(prev_contribs, dtype=np.float64), seat),
                          [pool]])
    return obs / norm


# -- clone network -------------------------------------------------------


@dataclass(frozen=True)
class CloneConfig:
    encoder_sizes: tuple[int, ...] = (16, 32)
    memory_size: int = 64
    projection_sizes: tuple[int, ...] = (32, 16)
    bins: int = 10
    obs_norm: float = OBS_NORM
    preset: str = "BC1"

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least 2 bins")

    def to_dict(self) -> dict:
        return {"encoder_sizes": list(self.encoder_sizes), "memory_size": self.memory_size,
                "projection_sizes": list(self.projection_sizes), "bins": self.bins,
                "obs_norm": self.obs_norm, "preset": self.preset}

    @classmethod
    def from_dict(cls, d: dict) -> "CloneConfig":
        return cls(encoder_sizes=tuple(d["encoder_sizes"]), memory_size=int(d["memory_size"]),
                   projection_sizes=tuple(d["projection_sizes"]), bins=int(d["bins"]),
                   obs_norm=float(d.get("obs_norm", OBS_NORM)), preset=d.get("preset", "custom"))


def bc1_config() -> CloneConfig:
    return CloneConfig()


def bc2_config() -> CloneConfig:
    # encoder/projection sizes shipped verbatim from the source table, which
    # says "2 non-linear layers" yet names three sizes; the lists win
    return CloneConfig(encoder_sizes=(128, 256, 512), memory_size=512,
                       projection_sizes=(512, 256, 128), preset="BC2")


def init_clone(rng: np.random.Generator, config: CloneConfig) -> nnet.ParamTree:
    params = {
        "encoder": nnet.init_stack(rng, OBS_DIM, list(config.encoder_sizes)),
        "gru": nnet.init_gru(rng, config.encoder_sizes[-1], config.memory_size),
        "projection": nnet.init_stack(rng, config.memory_size, list(config.projection_sizes)),
        "out": nnet.init_linear(rng, config.projection_sizes[-1], config.bins),
    }
    return params


def clone_forward(params: nnet.ParamTree, obs: Tensor, hidden: Tensor):
    """One round: returns (logits [..., N], new_hidden)."""
    x = nnet.stack_apply(params["encoder"], obs, "tanh")
    hidden = nnet.gru_cell(params["gru"], x, hidden)
    x = nnet.stack_apply(params["projection"], hidden, "tanh")
    return nnet.linear(params["out"], x), hidden


def clone_hidden_zero(config: CloneConfig, batch: tuple[int, ...] = ()) -> Tensor:
    return Tensor(np.zeros(batch + (config.memory_size,)))


def head_sample(logits: np.ndarray, offer: float, rng: np.random.Generator,
                mode: str = "argmax_bin", exclusion_threshold: float = 1.0) -> float:
    """Bin choice -> uniform fraction inside the bin -> contribution.

    Always consumes the same number of rng draws per call so episode streams
    stay aligned whether or not the seat is excluded this round.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[-1]
    if mode == "argmax_bin":
        b = int(np.argmax(logits))
    elif mode == "categorical_bin":
        shifted = logits - logits.max()
        probs = np.exp(shifted) / np.exp(shifted).sum()
        b = int(rng.choice(n, p=probs))
    else:
        raise ValueError(f"unknown head mode {mode!r}")
    frac = rng.uniform(b / n, (b + 1) / n)
    if offer < exclusion_threshold:
        return 0.0
    return float(min(frac * offer, offer))


def target_bin(contrib: float, offer: float, n_bins: int) -> int:
    if offer <= 0:
        return 0
    return int(np.clip(np.floor(n_bins * contrib / offer), 0, n_bins - 1))


class ClonePlayer(Player):
    """Engine-facing wrapper around frozen clone parameters."""

    def __init__(self, params: nnet.ParamTree, config: CloneConfig,
                 mode: str = "argmax_bin", name: str = "clone"):
        self.params = nnet.detach_tree(params)
        self.config = config
        self.mode = mode
        self.name = name

    def begin_episode(self, config: GameConfig, seat: int, rng: np.random.Generator):
        self._rng = rng
        self._hidden = clone_hidden_zero(self.config)
        self._threshold = config.exclusion_threshold

    def contribute(self, view: PlayerView) -> float:
        obs = observation_vector(view.offers, view.prev_contribs, view.pool,
                                 view.seat, self.config.obs_norm)
        logits, self._hidden = clone_forward(self.params, Tensor(obs), self._hidden)
        return head_sample(logits.data, view.my_offer, self._rng,
                           self.mode, self._threshold)


# -- supervised dataset --------------------------------------------------


@dataclass
class SupervisedDataset:
    """Per-seat episode sequences, padded to the longest episode.

    obs [M, T, 9]; bins [M, T]; mask [M, T] (False on padding and on rounds
    where the seat's offer fell below the exclusion threshold); offers [M, T].
    """

    obs: np.ndarray
    bins: np.ndarray
    mask: np.ndarray
    offers: np.ndarray
    n_bins: int

    @property
    def n_sequences(self) -> int:
        return self.obs.shape[0]

    @property
    def n_records(self) -> int:
        return int(self.mask.sum())

    def subset(self, idx) -> "SupervisedDataset":
        return SupervisedDataset(self.obs[idx], self.bins[idx], self.mask[idx],
                                 self.offers[idx], self.n_bins)


def build_dataset(logs: list[EpisodeLog], n_bins: int = 10,
                  obs_norm: float = OBS_NORM) -> SupervisedDataset:
    """One training sequence per (episode, seat)."""
    for log in logs:
        if log.schema_version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(log.schema_version)
    t_max = max(len(log.rounds) for log in logs)
    p = logs[0].config.num_players
    m = len(logs) * p
    obs = np.zeros((m, t_max, OBS_DIM))
    bins = np.zeros((m, t_max), dtype=np.int64)
    mask = np.zeros((m, t_max), dtype=bool)
    offers = np.zeros((m, t_max))
    row = 0
    for log in logs:
        threshold = log.config.exclusion_threshold
        for seat in range(p):
            prev_contribs = np.zeros(p)
            for t, rec in enumerate(log.rounds):
                obs[row, t] = observation_vector(rec.offers, prev_contribs,
                                                 rec.pool_before, seat, obs_norm)
                e = float(rec.offers[seat])
                offers[row, t] = e
                bins[row, t] = target_bin(float(rec.contributions[seat]), e, n_bins)
                mask[row, t] = e >= threshold
                prev_contribs = rec.contributions
            row += 1
    return SupervisedDataset(obs, bins, mask, offers, n_bins)


def split_dataset(ds: SupervisedDataset, holdout_frac: float, seed: int):
    rng = substream(seed, "dataset_split")
    idx = rng.permutation(ds.n_sequences)
    n_hold = max(1, int(round(holdout_frac * ds.n_sequences)))
    return ds.subset(idx[n_hold:]), ds.subset(idx[:n_hold])


# -- training ------------------------------------------------------------


@dataclass(frozen=True)
class CloneTrainSpec:
    batch: int = 256
    steps: int = 700_000
    schedule: Schedule = Schedule(lr0=5e-4, lr_min=5e-6, decay_rate=0.05, steps_per_decay=1000)
    checkpoint_steps: tuple[int, ...] = (200_000, 500_000)

    def scaled(self, steps: int, batch: int | None = None) -> "CloneTrainSpec":
        return dc_replace(self, steps=steps, batch=batch or self.batch,
                          checkpoint_steps=(max(1, steps // 2), steps))


def bc1_train_spec() -> CloneTrainSpec:
    return CloneTrainSpec()


def bc2_train_spec() -> CloneTrainSpec:
    return CloneTrainSpec(batch=1024, steps=1_500_000,
                          schedule=Schedule(lr0=1e-4, lr_min=1e-6, decay_rate=0.01,
                                            steps_per_decay=1000),
                          checkpoint_steps=(100_000, 150_000, 200_000, 1_000_000))


def desk_train_spec(steps: int = 2000, batch: int = 64) -> CloneTrainSpec:
    return CloneTrainSpec(batch=batch, steps=steps,
                          schedule=Schedule(lr0=5e-4, lr_min=5e-6, decay_rate=0.05,
                                            steps_per_decay=1000),
                          checkpoint_steps=(max(1, steps // 2), steps))


def _sequence_loss(params: nnet.ParamTree, obs: np.ndarray, bins: np.ndarray,
                   mask: np.ndarray, config: CloneConfig):
    """Masked mean cross-entropy over a [B, T] block, full-episode unroll."""
    b, t_max = bins.shape
    hidden = clone_hidden_zero(config, (b,))
    total = Tensor(0.0)
    for t in range(t_max):
        if not mask[:, t].any():
            continue
        logits, hidden = clone_forward(params, Tensor(obs[:, t]), hidden)
        losses = cross_entropy(logits, bins[:, t])
        total = total + (losses * Tensor(mask[:, t].astype(np.float64))).sum()
    return total * Tensor(1.0 / max(1, int(mask.sum())))


def train_clone(dataset: SupervisedDataset, config: CloneConfig,
                spec: CloneTrainSpec, seed: int, log_every: int = 0):
    """Minimize masked cross-entropy by full-episode backprop through time.

    Returns (checkpoints, history): checkpoints is a list of
    (step, ParamTree) at every spec.checkpoint_steps, history a list of
    (step, loss) training-loss samples.
    """
    rng_init = substream(seed, "clone_init")
    rng_batch = substream(seed, "clone_batch")
    params = init_clone(rng_init, config)
    opt = nnet.adam_init(params, spec.schedule)
    checkpoints: list[tuple[int, nnet.ParamTree]] = []
    history: list[tuple[int, float]] = []
    want = set(spec.checkpoint_steps)
    for step in range(1, spec.steps + 1):
        idx = rng_batch.integers(0, dataset.n_sequences, size=min(spec.batch, dataset.n_sequences))
        nnet.zero_grads(params)
        loss = _sequence_loss(params, dataset.obs[idx], dataset.bins[idx],
                              dataset.mask[idx], config)
        if not np.isfinite(loss.data):
            raise NonFiniteLoss(f"loss {loss.data} at step {step}")
        loss.backward()
        params, opt = nnet.adam_step(opt, params, nnet.grads_of(params))
        if log_every and (step == 1 or step % log_every == 0):
            history.append((step, float(loss.data)))
        if step in want:
            checkpoints.append((step, nnet.tree_map(lambda t: Tensor(t.data.copy(), requires_grad=True), params)))
    if spec.steps not in want and (not checkpoints or checkpoints[-1][0] != spec.steps):
        checkpoints.append((spec.steps, params))
    return checkpoints, history


def evaluate_clone(params: nnet.ParamTree, config: CloneConfig,
                   dataset: SupervisedDataset) -> dict:
    """Held-out masked loss and argmax-bin accuracy."""
    frozen = nnet.detach_tree(params)
    loss = _sequence_loss(frozen, dataset.obs, dataset.bins, dataset.mask, config)
    hidden = clone_hidden_zero(config, (dataset.n_sequences,))
    correct, total = 0, 0
    for t in range(dataset.obs.shape[1]):
        logits, hidden = clone_forward(frozen, Tensor(dataset.obs[:, t]), hidden)
        pred = np.argmax(logits.data, axis=-1)
        m = dataset.mask[:, t]
        correct += int((pred[m] == dataset.bins[m, t]).sum())
        total += int(m.sum())
    return {"loss": float(loss.data), "bin_accuracy": correct / max(1, total),
            "n_records": total}


# -- ensemble management -------------------------------------------------


def score_clone(params: nnet.ParamTree, clone_config: CloneConfig,
                game_config: GameConfig, seed: int, episodes_per_pair: int = 40,
                baseline_ws: tuple[float, ...] = (0.0, 0.5, 1.0)) -> float:
    """Surplus under hand-coded baselines minus surplus under the random
    mechanism; episode seeds are shared across candidates so scores pair."""
    from .mechanisms import RandomDirichletMechanism, WeightedMechanism

    def mean_surplus(make_mech, tag):
        totals = []
        for ep in range(episodes_per_pair):
            players = [ClonePlayer(params, clone_config) for _ in range(game_config.num_players)]
            log = run_episode(game_config, make_mech(), players,
                              derive_seed(seed, "clone_score", tag, ep))
            totals.append(log.total_surplus())
        return float(np.mean(totals))

    baseline = np.mean([mean_surplus(lambda w=w: WeightedMechanism(w=w), f"w{w}")
                        for w in baseline_ws])
    random_m = mean_surplus(RandomDirichletMechanism, "random")
    return float(baseline - random_m)


def select_clone_checkpoints(candidates, clone_config: CloneConfig,
                             game_config: GameConfig, seed: int,
                             n_select: int = 4, episodes_per_pair: int = 40):
    """Rank candidate (step, params) checkpoints and keep the top n_select."""
    if len(candidates) == 1:
        warnings.warn("only one clone candidate; ensemble of size 1")
    scored = []
    for i, (step, params) in enumerate(candidates):
        s = score_clone(params, clone_config, game_config, seed,
                        episodes_per_pair=episodes_per_pair)
        scored.append((s, i, step, params))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(step, params) for _, _, step, params in scored[:n_select]]


def ensemble_draw(ensemble, p: int, rng: np.random.Generator,
                  mode: str = "fixed_slots", clone_config: CloneConfig | None = None,
                  head_mode: str = "argmax_bin") -> list[ClonePlayer]:
    """Seat p players from an ensemble of parameter trees.

    fixed_slots: seat i gets ensemble[i mod len] (evaluation/analysis).
    with_replacement: each seat draws independently (planner training).
    """
    if not ensemble:
        raise ValueError("empty ensemble")
    cfg = clone_config or bc1_config()
    members = [params for _, params in ensemble] if isinstance(ensemble[0], tuple) else list(ensemble)
    if mode == "fixed_slots":
        picks = [i % len(members) for i in range(p)]
    elif mode == "with_replacement":
        picks = [int(rng.integers(len(members))) for _ in range(p)]
    else:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    return [ClonePlayer(members[j], cfg, mode=head_mode, name=f"clone{j}") for j in picks]


def save_clone(path, params: nnet.ParamTree, config: CloneConfig,
               step: int = 0, opt=None) -> None:
    meta = {"kind": "clone", "step": int(step), "config": config.to_dict()}
    nnet.save_checkpoint(path, params, meta=meta, opt=opt)


def load_clone(path):
    """-> (params, CloneConfig); rejects containers that hold anything else."""
    params, meta, _ = nnet.load_checkpoint(path)
    if not isinstance(meta, dict) or meta.get("kind") != "clone":
        raise nnet.CheckpointError(f"{path} is not a clone checkpoint")
    return params, CloneConfig.from_dict(meta["config"])
