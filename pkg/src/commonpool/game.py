"""Iterated common-pool trust game engine.

Each round: the mechanism splits the pool into per-player offers (plus an
optional retained remainder), every player returns part of their offer, and
the pool regrows by the growth multiplier times the total returned, capped at
its starting level. Players whose offer falls below the exclusion threshold
keep it all — their contribution is forced to zero for the round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .seeding import substream

SCHEMA_VERSION = "1"
ALLOC_TOL = 1e-9


class OverAllocation(ValueError):
    pass


class NegativeOffer(ValueError):
    pass


class ContributionExceedsOffer(ValueError):
    pass


class NonIntegerContribution(ValueError):
    pass


# -- configuration -------------------------------------------------------


@dataclass(frozen=True)
class FixedLength:
    """Play exactly max_rounds rounds (a depleted pool idles to the end)."""

    kind: str = field(default="fixed", init=False)


@dataclass(frozen=True)
class GeometricAfterMin:
    """Guaranteed minimum, then a fixed per-round continuation probability."""

    min_rounds: int = 25
    continue_after_min_prob: float = 0.8
    kind: str = field(default="geometric", init=False)

    def expected_rounds(self) -> float:
        q = self.continue_after_min_prob
        return self.min_rounds + q / (1.0 - q)


TerminationRule = FixedLength | GeometricAfterMin


@dataclass(frozen=True)
class GameConfig:
    num_players: int = 4
    initial_pool: float = 200.0
    growth_multiplier: float = 1.4
    max_rounds: int = 40
    termination: TerminationRule = FixedLength()
    integer_actions: bool = False
    exclusion_threshold: float = 1.0

    def __post_init__(self):
        if self.num_players < 2:
            raise ValueError("need at least 2 players")
        if self.initial_pool <= 0 or self.growth_multiplier <= 0:
            raise ValueError("initial_pool and growth_multiplier must be positive")
        if self.max_rounds < 1 or self.exclusion_threshold < 0:
            raise ValueError("bad max_rounds or exclusion_threshold")

    def to_dict(self) -> dict:
        term: dict = {"kind": self.termination.kind}
        if isinstance(self.termination, GeometricAfterMin):
            term["min_rounds"] = self.termination.min_rounds
            term["continue_after_min_prob"] = self.termination.continue_after_min_prob
        return {
            "num_players": self.num_players,
            "initial_pool": self.initial_pool,
            "growth_multiplier": self.growth_multiplier,
            "max_rounds": self.max_rounds,
            "termination": term,
            "integer_actions": self.integer_actions,
            "exclusion_threshold": self.exclusion_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        term = d.get("termination", {"kind": "fixed"})
        if term["kind"] == "fixed":
            rule: TerminationRule = FixedLength()
        elif term["kind"] == "geometric":
            rule = GeometricAfterMin(min_rounds=int(term["min_rounds"]),
                                     continue_after_min_prob=float(term["continue_after_min_prob"]))
        else:
            raise ValueError(f"unknown termination kind {term['kind']!r}")
        return cls(
            num_players=int(d["num_players"]),
            initial_pool=float(d["initial_pool"]),
            growth_multiplier=float(d["growth_multiplier"]),
            max_rounds=int(d["max_rounds"]),
            termination=rule,
            integer_actions=bool(d.get("integer_actions", False)),
            exclusion_threshold=float(d.get("exclusion_threshold", 1.0)),
        )


# -- state and records ---------------------------------------------------


@dataclass(frozen=True)
class GameState:
    """Snapshot between (or mid-) rounds. Arrays are never mutated in place."""

    t: int
    pool: float
    prev_offers: np.ndarray
    prev_contribs: np.ndarray
    cum_surplus: np.ndarray
    terminated: bool = False
    # mid-round fields, set between apply_offers and apply_contributions
    pool_round_start: float = 0.0
    pending_offers: np.ndarray | None = None
    pending_retained: float = 0.0


def initial_state(config: GameConfig) -> GameState:
    p = config.num_players
    return GameState(t=0, pool=config.initial_pool,
                     prev_offers=np.zeros(p), prev_contribs=np.zeros(p),
                     cum_surplus=np.zeros(p))


@dataclass(frozen=True)
class RoundRecord:
    t: int
    pool_before: float
    offers: np.ndarray
    retained: float
    contributions: np.ndarray
    surpluses: np.ndarray
    pool_after: float


@dataclass
class EpisodeLog:
    config: GameConfig
    mechanism_id: str
    player_ids: list[str]
    rounds: list[RoundRecord]
    seed: int
    schema_version: str = SCHEMA_VERSION
    events: list[dict] = field(default_factory=list)

    def total_surplus(self) -> float:
        return float(sum(r.surpluses.sum() for r in self.rounds))

    def per_player_surplus(self) -> np.ndarray:
        p = self.config.num_players
        out = np.zeros(p)
        for r in self.rounds:
            out += r.surpluses
        return out


# -- round transitions ---------------------------------------------------


def apply_offers(state: GameState, offers, retained: float, config: GameConfig) -> GameState:
    """Stage this round's allocation; pool drops provisionally by the total offered."""
    if state.terminated:
        raise ValueError("game already terminated")
    if state.pending_offers is not None:
        raise ValueError("offers already staged for this round")
    offers = np.asarray(offers, dtype=np.float64)
    if offers.shape != (config.num_players,):
        raise ValueError(f"expected {config.num_players} offers, got shape {offers.shape}")
    if np.any(offers < 0):
        raise NegativeOffer(f"offers must be nonnegative: {offers}")
    if retained < 0:
        raise NegativeOffer(f"retained must be nonnegative: {retained}")
    total = float(offers.sum()) + retained
    if total > state.pool + ALLOC_TOL:
        raise OverAllocation(f"allocated {total} from pool {state.pool}")
    return replace(state,
                   pool=max(0.0, state.pool - float(offers.sum())),
                   pool_round_start=state.pool,
                   pending_offers=offers,
                   pending_retained=float(retained))


def apply_contributions(state: GameState, contribs, config: GameConfig) -> tuple[GameState, RoundRecord]:
    """Resolve the round: regrow the pool, bank surpluses, advance the clock."""
    if state.pending_offers is None:
        raise ValueError("no offers staged; call apply_offers first")
    offers = state.pending_offers
    contribs = np.asarray(contribs, dtype=np.float64)
    if contribs.shape != offers.shape:
        raise ValueError(f"expected {offers.shape[0]} contributions")
    if np.any(contribs < 0) or np.any(contribs > offers + ALLOC_TOL):
        raise ContributionExceedsOffer(f"contribs {contribs} vs offers {offers}")
    below = offers < config.exclusion_threshold
    if np.any(contribs[below] != 0.0):
        raise ContributionExceedsOffer(
            f"players with offers below {config.exclusion_threshold} must contribute 0")
    if config.integer_actions and np.any(contribs != np.round(contribs)):
        raise NonIntegerContribution(f"integer game got {contribs}")
    contribs = np.minimum(contribs, offers)

    m = config.growth_multiplier
    pool_before = state.pool_round_start
    pool_after = min(config.initial_pool,
                     max(0.0, pool_before - float(offers.sum()) + m * float(contribs.sum())))
    surpluses = offers - contribs
    new_t = state.t + 1
    if isinstance(config.termination, FixedLength):
        terminated = new_t >= config.max_rounds
    else:
        # a pool below the exclusion threshold can never regrow: every offer
        # must be below threshold, forcing zero contributions forever
        terminated = pool_after < config.exclusion_threshold
    record = RoundRecord(t=state.t, pool_before=pool_before, offers=offers,
                         retained=state.pending_retained, contributions=contribs,
                         surpluses=surpluses, pool_after=pool_after)
    new_state = GameState(t=new_t, pool=pool_after,
                          prev_offers=offers, prev_contribs=contribs,
                          cum_surplus=state.cum_surplus + surpluses,
                          terminated=terminated)
    return new_state, record


def should_terminate(state: GameState, config: GameConfig, rng: np.random.Generator) -> bool:
    """Post-round stop decision; draws from rng only in geometric mode."""
    rule = config.termination
    if isinstance(rule, FixedLength):
        return state.t >= config.max_rounds
    if state.t < rule.min_rounds:
        return False
    return bool(rng.random() >= rule.continue_after_min_prob)


# -- episode driver ------------------------------------------------------


@dataclass(frozen=True)
class PlayerView:
    """What one seat can see when choosing a contribution."""

    seat: int
    t: int
    pool: float
    offers: np.ndarray
    prev_offers: np.ndarray
    prev_contribs: np.ndarray

    @property
    def my_offer(self) -> float:
        return float(self.offers[self.seat])


class Player:
    """Base player: override contribute(); begin_episode resets per-episode state."""

    def begin_episode(self, config: GameConfig, seat: int, rng: np.random.Generator) -> None:
        pass

    def contribute(self, view: PlayerView) -> float:
        raise NotImplementedError


class Mechanism:
    """Base allocation mechanism. propose() returns (offers[p], retained)."""

    mechanism_id: str = "mechanism"

    def begin_episode(self, config: GameConfig, rng: np.random.Generator) -> None:
        pass

    def propose(self, state: GameState, config: GameConfig) -> tuple[np.ndarray, float]:
        raise NotImplementedError


def run_episode(config: GameConfig, mechanism: Mechanism, players,
                seed: int, player_ids: list[str] | None = None) -> EpisodeLog:
    """Play one full game and return its replayable log.

    All randomness derives from ``seed`` through named substreams, one per
    component, so paired comparisons across mechanisms reuse identical player
    randomness.
    """
    p = config.num_players
    if len(players) != p:
        raise ValueError(f"need {p} players, got {len(players)}")
    mechanism.begin_episode(config, substream(seed, "mechanism"))
    for seat, player in enumerate(players):
        player.begin_episode(config, seat, substream(seed, "player", seat))
    rng_term = substream(seed, "termination")

    state = initial_state(config)
    rounds: list[RoundRecord] = []
    while not state.terminated:
        offers, retained = mechanism.propose(state, config)
        state = apply_offers(state, offers, retained, config)
        contribs = np.zeros(p)
        for seat, player in enumerate(players):
            view = PlayerView(seat=seat, t=state.t, pool=state.pool_round_start,
                              offers=state.pending_offers,
                              prev_offers=state.prev_offers,
                              prev_contribs=state.prev_contribs)
            c = float(player.contribute(view))
            if state.pending_offers[seat] < config.exclusion_threshold:
                c = 0.0
            contribs[seat] = min(max(c, 0.0), state.pending_offers[seat])
        state, record = apply_contributions(state, contribs, config)
        rounds.append(record)
        if not state.terminated and should_terminate(state, config, rng_term):
            state = replace(state, terminated=True)
    ids = player_ids if player_ids is not None else [f"player{i}" for i in range(p)]
    return EpisodeLog(config=config, mechanism_id=mechanism.mechanism_id,
                      player_ids=list(ids), rounds=rounds, seed=int(seed))


# -- wire format ---------------------------------------------------------
# Line-delimited: one header line, then one line per round. Field order is
# fixed by hand so identical logs serialize to identical bytes.


def _f(x: float) -> str:
    return "%.17g" % float(x)


def _farr(xs: np.ndarray) -> str:
    return "[" + ",".join(_f(x) for x in xs) + "]"


def episode_log_lines(log: EpisodeLog) -> list[str]:
    cfg = json.dumps(log.config.to_dict(), sort_keys=True, separators=(",", ":"))
    ids = json.dumps(log.player_ids, separators=(",", ":"))
    events = json.dumps(log.events, sort_keys=True, separators=(",", ":"))
    header = (f'{{"schema_version":"{log.schema_version}","seed":{log.seed},'
              f'"mechanism_id":{json.dumps(log.mechanism_id)},"player_ids":{ids},'
              f'"config":{cfg},"events":{events}}}')
    lines = [header]
    for r in log.rounds:
        lines.append(f'{{"t":{r.t},"pool_before":{_f(r.pool_before)},'
                     f'"offers":{_farr(r.offers)},"retained":{_f(r.retained)},'
                     f'"contributions":{_farr(r.contributions)},'
                     f'"surpluses":{_farr(r.surpluses)},'
                     f'"pool_after":{_f(r.pool_after)}}}')
    return lines


def write_episode_log(path, log: EpisodeLog) -> None:
    with open(path, "w", encoding="utf8") as fh:
        fh.write("\n".join(episode_log_lines(log)) + "\n")


def parse_episode_log(lines) -> EpisodeLog:
    if isinstance(lines, str):
        lines = lines.splitlines()
    lines = [ln for ln in lines if ln.strip()]
    header = json.loads(lines[0])
    if header["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {header['schema_version']!r}")
    rounds = []
    for ln in lines[1:]:
        d = json.loads(ln)
        rounds.append(RoundRecord(
            t=int(d["t"]), pool_before=float(d["pool_before"]),
            offers=np.array(d["offers"], dtype=np.float64),
            retained=float(d["retained"]),
            contributions=np.array(d["contributions"], dtype=np.float64),
            surpluses=np.array(d["surpluses"], dtype=np.float64),
            pool_after=float(d["pool_after"])))
    return EpisodeLog(config=GameConfig.from_dict(header["config"]),
                      mechanism_id=header["mechanism_id"],
                      player_ids=list(header["player_ids"]),
                      rounds=rounds, seed=int(header["seed"]),
                      schema_version=header["schema_version"],
                      events=list(header.get("events", [])))


def read_episode_log(path) -> EpisodeLog:
    with open(path, "r", encoding="utf8") as fh:
        return parse_episode_log(fh.read())


def replay_rounds(log: EpisodeLog) -> list[RoundRecord]:
    """Re-derive every round record from the logged decisions alone.

    Feeds the logged offers and contributions back through the state
    transition, so any drift between what a live host showed and what the
    rules imply shows up as a mismatch against the stored records.
    """
    state = initial_state(log.config)
    out = []
    for r in log.rounds:
        state = apply_offers(state, r.offers, r.retained, log.config)
        state, rec = apply_contributions(state, r.contributions, log.config)
        out.append(rec)
    return out
