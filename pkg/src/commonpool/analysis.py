"""Metrics, event extraction, regressions, and statistical tests over episode logs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .game import EpisodeLog, SCHEMA_VERSION


class NegativeValue(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class SchemaVersionMismatch(ValueError):
    pass


# -- inequality ----------------------------------------------------------


def gini(values) -> float:
    """Pairwise-difference population Gini; all-zero input is 0 by convention."""
    x = np.asarray(values, dtype=np.float64)
    if np.any(x < 0):
        raise NegativeValue(f"gini needs nonnegative values, got {x}")
    total = x.sum()
    if total == 0:
        return 0.0
    diffs = np.abs(x[:, None] - x[None, :]).sum()
    return float(diffs / (2.0 * len(x) * total))


# -- per-game metrics ----------------------------------------------------


@dataclass
class ExclusionEvent:
    player: int
    start_trial: int            # 1-indexed trial where the offer first dropped below threshold
    duration: int               # consecutive sub-threshold trials
    permanent: bool             # ran to the end of the episode
    prior_reciprocation: float  # the player's contribution on the trial before exclusion
    reinclusion_offer: float | None
    pool_at_reinclusion: float | None


@dataclass
class MetricsReport:
    total_surplus: float
    player_surpluses: np.ndarray
    gini_surplus: float
    active_players_mean: float
    depletion_trial: int | None  # 1-indexed; None if never depleted
    sustained: bool
    n_trials: int
    trial_pool: np.ndarray       # pool at each trial (before allocation)
    trial_offer_gini: np.ndarray
    trial_active: np.ndarray
    exclusions: list[ExclusionEvent] = field(default_factory=list)


def _check_schema(log: EpisodeLog):
    if log.schema_version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(log.schema_version)


def exclusion_events(log: EpisodeLog, threshold: float = 1.0) -> list[ExclusionEvent]:
    """Spells of sub-threshold offers that follow an at-or-above-threshold trial."""
    _check_schema(log)
    events: list[ExclusionEvent] = []
    n = len(log.rounds)
    p = log.config.num_players
    for player in range(p):
        offers = np.array([r.offers[player] for r in log.rounds])
        contribs = np.array([r.contributions[player] for r in log.rounds])
        t = 1
        while t < n:
            if offers[t] < threshold and offers[t - 1] >= threshold:
                end = t
                while end + 1 < n and offers[end + 1] < threshold:
                    end += 1
                permanent = end == n - 1
                events.append(ExclusionEvent(
                    player=player,
                    start_trial=t + 1,
                    duration=end - t + 1,
                    permanent=permanent,
                    prior_reciprocation=float(contribs[t - 1]),
                    reinclusion_offer=None if permanent else float(offers[end + 1]),
                    pool_at_reinclusion=None if permanent else float(log.rounds[end + 1].pool_before),
                ))
                t = end + 1
            else:
                t += 1
    return events


def game_metrics(log: EpisodeLog, threshold: float = 1.0) -> MetricsReport:
    _check_schema(log)
    surpluses = log.per_player_surplus()
    pools = np.array([r.pool_before for r in log.rounds])
    offer_ginis = np.array([gini(r.offers) for r in log.rounds])
    active = np.array([int((r.offers >= threshold).sum()) for r in log.rounds])
    below = np.nonzero(pools < threshold)[0]
    depletion = int(below[0]) + 1 if below.size else None
    return MetricsReport(
        total_surplus=log.total_surplus(),
        player_surpluses=surpluses,
        gini_surplus=gini(surpluses),
        active_players_mean=float(active.mean()),
        depletion_trial=depletion,
        sustained=depletion is None,
        n_trials=len(log.rounds),
        trial_pool=pools,
        trial_offer_gini=offer_ginis,
        trial_active=active,
        exclusions=exclusion_events(log, threshold),
    )


# -- lagged offer regression ---------------------------------------------

LAGS = tuple(range(-4, 5))


class SingularDesign(ValueError):
    pass


@dataclass
class LaggedRegressionResult:
    lags: tuple[int, ...]
    trials: list[int]                 # 1-indexed trials that produced a fit
    per_trial_weights: np.ndarray     # [n_trials, n_lags]
    median_weights: np.ndarray        # [n_lags]
    skipped_trials: list[int]         # singular designs, 1-indexed

    def weight_at(self, lag: int) -> float:
        return float(self.median_weights[self.lags.index(lag)])


def lagged_offer_regression(logs: list[EpisodeLog], lags=LAGS) -> LaggedRegressionResult:
    """OLS of a player's offer at trial t on their contributions at t+k.

    One regression per trial, pooling players and games as data points; only
    trials with the full lag window enter. Singular designs are skipped and
    reported. Medians are taken across trials.
    """
    for log in logs:
        _check_schema(log)
    lags = tuple(lags)
    n_trials = min(len(log.rounds) for log in logs)
    lo, hi = -min(lags), max(lags)
    usable = range(lo, n_trials - hi)  # 0-indexed trial range with full window
    trials, weights, skipped = [], [], []
    for t in usable:
        rows_x, rows_y = [], []
        for log in logs:
            p = log.config.num_players
            for i in range(p):
                rows_y.append(log.rounds[t].offers[i])
                rows_x.append([log.rounds[t + k].contributions[i] for k in lags])
        x = np.column_stack([np.asarray(rows_x), np.ones(len(rows_x))])
        y = np.asarray(rows_y)
        coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        if rank < x.shape[1]:
            skipped.append(t + 1)
            continue
        trials.append(t + 1)
        weights.append(coef[:len(lags)])
    if weights:
        per_trial = np.asarray(weights)
        median = np.median(per_trial, axis=0)
    else:
        per_trial = np.empty((0, len(lags)))
        median = np.full(len(lags), np.nan)
    return LaggedRegressionResult(lags=lags, trials=trials, per_trial_weights=per_trial,
                                  median_weights=median, skipped_trials=skipped)


# -- reciprocation ratio profile -----------------------------------------


def reciprocation_ratio_profile(logs: list[EpisodeLog], m: float,
                                threshold: float = 1.0) -> dict:
    """Mean per-trial return ratio over active players, bucketed by how many
    players were active; the sustainability reference is 1/m."""
    if m <= 1.0:
        raise ValueError("growth multiplier must exceed 1")
    by_count: dict[int, list[float]] = {}
    omitted = 0
    for log in logs:
        _check_schema(log)
        for rec in log.rounds:
            active = rec.offers >= threshold
            total_e = float(rec.offers[active].sum())
            if total_e == 0.0:
                omitted += 1
                continue
            rr = float(rec.contributions[active].sum()) / total_e
            by_count.setdefault(int(active.sum()), []).append(rr)
    rows = [{"active_count": k, "mean_rr": float(np.mean(v)), "n_trials": len(v)}
            for k, v in sorted(by_count.items())]
    return {"rows": rows, "reference": 1.0 / m, "omitted_trials": omitted}


# -- planner probes ------------------------------------------------------


def pool_scaling_probe(planner_params, planner_config, ensemble, clone_config,
                       game_config, coefficients=(0.1, 0.5, 1.0, 2.0, 6.0),
                       episodes_per_coef: int = 8, seed: int = 0) -> list[dict]:
    """Scale only the planner's *perception* of the pool and watch its offers.

    The true pool dynamics are untouched; episode seeds are shared across
    coefficients so rows are paired.
    """
    from .planner import NeuralMechanism
    from .players import ensemble_draw
    from .seeding import derive_seed, substream

    rows = []
    for coef in coefficients:
        ginis = []
        for ep in range(episodes_per_coef):
            mech = NeuralMechanism(planner_params, planner_config,
                                   pool_obs_scale=float(coef))
            players = ensemble_draw(ensemble, game_config.num_players,
                                    substream(seed, "probe_players", ep),
                                    mode="fixed_slots", clone_config=clone_config)
            from .game import run_episode

            log = run_episode(game_config, mech, players,
                              derive_seed(seed, "pool_probe", ep))
            ginis.extend(gini(r.offers) for r in log.rounds)
        rows.append({"coef": float(coef), "mean_offer_gini": float(np.mean(ginis))})
    return rows


def parameter_generalization_sweep(mechanism_factories: dict, players_factory,
                                   base_config, pool_grid, growth_grid,
                                   episodes_per_cell: int = 4, seed: int = 0) -> list[dict]:
    """Cross-product of pool sizes and growth multipliers for each mechanism."""
    from dataclasses import replace

    from .game import run_episode
    from .seeding import derive_seed

    rows = []
    for name, factory in mechanism_factories.items():
        for pool_max in pool_grid:
            for m in growth_grid:
                cfg = replace(base_config, initial_pool=float(pool_max),
                              growth_multiplier=float(m))
                surpluses, ginis = [], []
                for ep in range(episodes_per_cell):
                    log = run_episode(cfg, factory(), players_factory(),
                                      derive_seed(seed, "gen_sweep", name, pool_max, m, ep))
                    surpluses.append(log.total_surplus())
                    ginis.append(gini(log.per_player_surplus()))
                rows.append({"mechanism": name, "pool_max": float(pool_max),
                             "growth": float(m),
                             "mean_surplus": float(np.mean(surpluses)),
                             "mean_gini": float(np.mean(ginis))})
    return rows


# -- statistics ----------------------------------------------------------


def rank_sum_test(group_a, group_b) -> tuple[float, float]:
    """Two-sided rank-sum z-test with midranks and tie correction."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateInput("need at least 2 observations per group")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        raise DegenerateInput("all observations identical")
    n_a, n_b = a.size, b.size
    n = n_a + n_b
    ranks = scipy.stats.rankdata(pooled)  # midranks for ties
    w = ranks[:n_a].sum()
    mu = n_a * (n + 1) / 2.0
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(((counts ** 3) - counts).sum())
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    z = (w - mu) / np.sqrt(var)
    p = 2.0 * scipy.stats.norm.sf(abs(z))
    return float(z), float(min(p, 1.0))


def pearson(x, y) -> tuple[float, float]:
    r, p = scipy.stats.pearsonr(np.asarray(x, dtype=np.float64),
                                np.asarray(y, dtype=np.float64))
    return float(r), float(p)


def fdr_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg adjusted q-values, original order."""
    p = np.asarray(p_values, dtype=np.float64)
    n = p.size
    order = np.argsort(p, kind="stable")
    q_sorted = p[order] * n / np.arange(1, n + 1)
    q_sorted = np.minimum.accumulate(q_sorted[::-1])[::-1]
    q = np.empty(n)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


# -- report files --------------------------------------------------------


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    """Plain comma-separated report with a fixed column order."""
    import csv

    with open(path, "w", newline="", encoding="utf8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def metrics_rows(logs: list[EpisodeLog], labels: list[str] | None = None) -> list[dict]:
    """One row per game, ready for write_csv."""
    labels = labels or [f"game{i}" for i in range(len(logs))]
    rows = []
    for label, log in zip(labels, logs):
        rep = game_metrics(log, log.config.exclusion_threshold)
        rows.append({
            "game": label,
            "mechanism": log.mechanism_id,
            "seed": log.seed,
            "n_trials": rep.n_trials,
            "total_surplus": rep.total_surplus,
            "gini_surplus": rep.gini_surplus,
            "active_players_mean": rep.active_players_mean,
            "depletion_trial": "" if rep.depletion_trial is None else rep.depletion_trial,
            "sustained": int(rep.sustained),
            "n_exclusions": len(rep.exclusions),
        })
    return rows


METRICS_COLUMNS = ["game", "mechanism", "seed", "n_trials", "total_surplus",
                   "gini_surplus", "active_players_mean", "depletion_trial",
                   "sustained", "n_exclusions"]
