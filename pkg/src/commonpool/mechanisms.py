"""Hand-coded allocation policies over the common pool.

All mechanisms return (offers[p], retained) with retained = budget not
offered, so every round record fully accounts for the pool it drew from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import GameConfig, GameState, Mechanism


def equal_first_round(pool: float, p: int, retention_frac: float = 0.0) -> np.ndarray:
    return np.full(p, (1.0 - retention_frac) * pool / p)


def weighted_offers(pool: float, prev_contribs: np.ndarray, w: float) -> np.ndarray:
    """Mix of equal split (weight w) and contribution-proportional split.

    With zero total previous contribution the proportional component pays
    nobody — the grim-trigger behavior at w=0.
    """
    prev_contribs = np.asarray(prev_contribs, dtype=np.float64)
    p = len(prev_contribs)
    total = prev_contribs.sum()
    equal = np.full(p, pool / p)
    # shares first, then scale: keeps sums feasible even for subnormal totals
    prop = pool * (prev_contribs / total) if total > 0 else np.zeros(p)
    return w * equal + (1.0 - w) * prop


def interpolation_weight(pool: float, k: float, pool_max: float) -> float:
    return (pool / pool_max) ** k


def interpolating_offers(pool: float, prev_contribs: np.ndarray, k: float,
                         pool_max: float) -> np.ndarray:
    return weighted_offers(pool, prev_contribs, interpolation_weight(pool, k, pool_max))


def dirichlet_offers(pool: float, rng: np.random.Generator, p: int,
                     concentration: float = 1.0) -> tuple[np.ndarray, float]:
    """p+1 random simplex proportions: p offers plus a retained share."""
    props = rng.dirichlet(np.full(p + 1, concentration))
    return pool * props[:p], float(pool * props[p])


@dataclass
class WeightedMechanism(Mechanism):
    """Fixed mixing weight; equal split on the opening round."""

    w: float = 1.0
    retention_frac: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.w <= 1.0 and 0.0 <= self.retention_frac <= 1.0):
            raise ValueError("w and retention_frac must lie in [0, 1]")
        self.mechanism_id = f"weighted(w={self.w:g},retention={self.retention_frac:g})"

    def propose(self, state: GameState, config: GameConfig) -> tuple[np.ndarray, float]:
        budget = (1.0 - self.retention_frac) * state.pool
        if state.t == 0:
            offers = equal_first_round(state.pool, config.num_players, self.retention_frac)
        else:
            offers = weighted_offers(budget, state.prev_contribs, self.w)
        return offers, max(0.0, state.pool - float(offers.sum()))


def equal_mechanism() -> WeightedMechanism:
    return WeightedMechanism(w=1.0)


def proportional_mechanism() -> WeightedMechanism:
    return WeightedMechanism(w=0.0)


@dataclass
class InterpolatingMechanism(Mechanism):
    """Pool-dependent mixing weight w = (pool / pool_max)^k."""

    k: float = 22.0
    retention_frac: float = 0.0

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        self.mechanism_id = f"interpolating(k={self.k:g})"

    def propose(self, state: GameState, config: GameConfig) -> tuple[np.ndarray, float]:
        budget = (1.0 - self.retention_frac) * state.pool
        if state.t == 0:
            offers = equal_first_round(state.pool, config.num_players, self.retention_frac)
        else:
            w = interpolation_weight(state.pool, self.k, config.initial_pool)
            offers = weighted_offers(budget, state.prev_contribs, w)
        return offers, max(0.0, state.pool - float(offers.sum()))


@dataclass
class RandomDirichletMechanism(Mechanism):
    """Fresh random simplex split every round (offers + retained share)."""

    concentration: float = 1.0

    def __post_init__(self):
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")
        self.mechanism_id = f"random_dirichlet(concentration={self.concentration:g})"
        self._rng: np.random.Generator | None = None

    def begin_episode(self, config: GameConfig, rng: np.random.Generator) -> None:
        self._rng = rng

    def propose(self, state: GameState, config: GameConfig) -> tuple[np.ndarray, float]:
        if self._rng is None:
            raise RuntimeError("begin_episode not called")
        offers, retained = dirichlet_offers(state.pool, self._rng,
                                            config.num_players, self.concentration)
        return offers, retained


# -- mechanism specs (config-file representation) ------------------------


def mechanism_from_spec(spec: dict) -> Mechanism:
    """Build a mechanism from a tagged config record.

    kinds: equal | proportional | weighted(w, retention_frac) |
    interpolating(k) | random_dirichlet(concentration) | neural(checkpoint, ...)
    """
    kind = spec["kind"]
    if kind == "equal":
        return equal_mechanism()
    if kind == "proportional":
        return proportional_mechanism()
    if kind == "weighted":
        return WeightedMechanism(w=float(spec["w"]),
                                 retention_frac=float(spec.get("retention_frac", 0.0)))
    if kind == "interpolating":
        return InterpolatingMechanism(k=float(spec["k"]),
                                      retention_frac=float(spec.get("retention_frac", 0.0)))
    if kind == "random_dirichlet":
        return RandomDirichletMechanism(concentration=float(spec.get("concentration", 1.0)))
    if kind == "neural":
        from .planner import NeuralMechanism, load_planner

        params, planner_config = load_planner(spec["checkpoint"])
        return NeuralMechanism(params, planner_config)
    raise ValueError(f"unknown mechanism kind {kind!r}")


def sweep_interpolation_k(grid, players_factory, config: GameConfig,
                          episodes_per_k: int, seed: int):
    """Run paired episodes for every exponent k; returns (rows, best_k).

    rows: list of dicts {k, mean_surplus, mean_gini}. Episode seeds are shared
    across k so the comparison is paired. Ties on surplus break toward the
    larger k.
    """
    from .analysis import gini
    from .game import run_episode
    from .seeding import derive_seed

    rows = []
    for k in grid:
        surpluses, ginis = [], []
        for ep in range(episodes_per_k):
            log = run_episode(config, InterpolatingMechanism(k=float(k)),
                              players_factory(), derive_seed(seed, "sweep_k", ep))
            surpluses.append(log.total_surplus())
            ginis.append(gini(log.per_player_surplus()))
        rows.append({"k": float(k), "mean_surplus": float(np.mean(surpluses)),
                     "mean_gini": float(np.mean(ginis))})
    best = max(rows, key=lambda r: (r["mean_surplus"], r["k"]))
    return rows, best["k"]


def default_k_grid() -> np.ndarray:
    return np.exp(np.linspace(-5.0, 5.0, 101))
