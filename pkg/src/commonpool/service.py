"""Live multiplayer host: four-seat sessions over HTTP with server-push state.

A session walks lobby -> (awaiting_contributions -> overview)* ->
[questionnaire] -> ended.  Humans join for seat tokens; empty seats are
filled from a configured clone ensemble.  The server clock is authoritative:
clients only ever see remaining-time hints.  A seat that times out once has
its staged slider value recorded; a second timeout replaces the participant
with a uniformly random bot for good and flags the session as a dropout
(excluded from analysis by default).

Every round resolves through the exact same state transition the offline
engine uses, so a finished session's log replays bit for bit.  All mutation
of one session happens under its lock, one event at a time — clone inference
for machine seats runs inside that turn, never concurrently with human
submissions for the same round.

Wire format: JSON request/response plus a "data: {json}" server-sent event
stream per seat; every payload carries schema_version.
"""
from __future__ import annotations

import asyncio
import json
import os
import queue
import secrets
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .game import (EpisodeLog, GameConfig, GeometricAfterMin, PlayerView,
                   apply_contributions, apply_offers, initial_state,
                   should_terminate, write_episode_log)
from .mechanisms import mechanism_from_spec
from .players import ClonePlayer, bc1_config
from .seeding import derive_seed, substream

VIEW_SCHEMA_VERSION = "1"
DEFAULT_BONUS_RATE = 0.008      # game points -> pounds
DEFAULT_RESPONSE_SECONDS = 90.0
DEFAULT_OVERVIEW_SECONDS = 8.0
TICK_SECONDS = 0.5              # served-app deadline sweep cadence

# Interface copy shipped as fixed resources: the lobby explanation shown for
# each mechanism family, and the end-of-game attitude statements, in display
# order.  These strings are part of the product surface — change them and
# recorded sessions stop being comparable.
INSTRUCTION_SCRIPTS = {
    "proportional": (
        "The manager will offer flowers proportional to the last re-investment. "
        "For example, if half of the total reinvestment last round was done by "
        "you, you get half of the flowers this round. If a player is the only "
        "one who re-invested, they will get all the flowers next round. "
        "Generally, the more you re-invest the more you get offered, but it is "
        "always relative to other players."),
    "interpolating": (
        "The manager will adjust its policy to the flower field size. When "
        "there are a lot of flowers in the field, the manager will tend to give "
        "flowers to everyone, no matter how much or little they reinvested. If "
        "there are few flowers in the field, the manager will tend to give more "
        "flowers to those players who re-invested the most on the last trial "
        "(relative to other players.)"),
    "rl_agent": (
        "The manager you will play with, has the following strategy: The "
        "manager aims to offer flowers in such a way that all players make the "
        "maximum amount of money possible over the course of the experiment."),
    "proportional_sustainability": (
        "You can choose how much to keep from the offer and how much to "
        "re-invest from the offer to the flower field in order to sustain it. "
        "If everyone keeps 29% of each offer, then the flower field can be "
        "sustained indefinitely (because the re-investment grows). However, if "
        "one player takes more than 29%, this player may make more money than "
        "the others. However, if all of the players take more than 29%, then "
        "the flower field will shrink. In short, each player individually can "
        "be better off taking more than 29%, but for the flower field to be "
        "sustained the group as a whole has to act sustainably."),
}

QUESTIONNAIRE_STATEMENTS = (
    "The manager's policy was fair.",
    "The manager's policy encouraged ME to contribute.",
    "The manager's policy encouraged OTHERS to contribute.",
    "The manager's policy was easy to understand.",
    "I can think of a policy that would have been better for everyone.",
    "I am satisfied with the money I made from the game.",
    "If I played again I would like to play with this manager again.",
    "This manager encouraged me to contribute in a way that was beneficial to others.",
)


def instruction_key_for(mechanism_id: str) -> str | None:
    if mechanism_id.startswith("weighted(w=0,"):
        return "proportional"
    if mechanism_id.startswith("interpolating"):
        return "interpolating"
    if mechanism_id.startswith("planner"):
        return "rl_agent"
    return None


# -- errors --------------------------------------------------------------


class SessionError(Exception):
    code = "SessionError"
    http_status = 400

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail or self.code


class InvalidSeatCount(SessionError):
    code = "InvalidSeatCount"


class SessionFull(SessionError):
    code = "SessionFull"
    http_status = 409


class UnknownToken(SessionError):
    code = "UnknownToken"
    http_status = 401


class UnknownSession(SessionError):
    code = "UnknownSession"
    http_status = 404


class WrongPhase(SessionError):
    code = "WrongPhase"
    http_status = 409


class OutOfRange(SessionError):
    code = "OutOfRange"


class Expired(SessionError):
    code = "Expired"
    http_status = 409


class BadRating(SessionError):
    code = "BadRating"


class ClonesUnavailable(SessionError):
    code = "ClonesUnavailable"
    http_status = 503


# -- session -------------------------------------------------------------

LOBBY, AWAITING, OVERVIEW, QUESTIONNAIRE, ENDED = (
    "lobby", "awaiting_contributions", "overview", "questionnaire", "ended")


@dataclass
class Seat:
    kind: str                  # "human" | "clone" | "bot"
    token: str | None = None
    client: str | None = None
    player: object | None = None   # policy object for clone seats
    staged: int = 0
    submitted: float | None = None
    timeouts: int = 0
    kept_total: float = 0.0


@dataclass(frozen=True)
class SessionOptions:
    human_seats: int = 4
    games_in_series: int = 1
    questionnaire: bool = True
    bonus_rate: float = DEFAULT_BONUS_RATE
    response_seconds: float = DEFAULT_RESPONSE_SECONDS
    overview_seconds: float = DEFAULT_OVERVIEW_SECONDS
    instruction_key: str | None = None   # None -> inferred from the mechanism


class Session:
    """One four-seat game series; all mutation under self.lock."""

    def __init__(self, session_id: str, game_config: GameConfig, mechanism,
                 options: SessionOptions, seed: int, clock=time.monotonic,
                 clone_source=None):
        p = game_config.num_players
        if not 0 <= options.human_seats <= p:
            raise InvalidSeatCount(f"human_seats must be in [0, {p}]")
        self.id = session_id
        self.config = game_config
        self.mechanism = mechanism
        self.options = options
        self.seed = int(seed)
        self.clock = clock
        self.lock = threading.RLock()
        self.phase = LOBBY
        self.deadline: float | None = None
        self.game_index = 0
        self.state = None
        self.rounds = []
        self.logs: list[EpisodeLog] = []
        self.dropout = False
        self.events: list[dict] = []
        self.questionnaires: dict[int, list[int]] = {}
        self._subscribers: list[tuple[int, queue.Queue]] = []
        self._tokens: dict[str, int] = {}
        self.seats = [Seat(kind="human") for _ in range(options.human_seats)]
        for j in range(p - options.human_seats):
            if clone_source is None:
                raise ClonesUnavailable("no clone ensemble configured for machine seats")
            self.seats.append(Seat(kind="clone", player=clone_source(j)))
        self.instruction_key = (options.instruction_key
                                if options.instruction_key is not None
                                else instruction_key_for(mechanism.mechanism_id))
        if options.human_seats == 0:
            self._begin_game()

    # -- lobby ----------------------------------------------------------

    def join(self, client: str | None = None) -> tuple[str, int]:
        with self.lock:
            if client is not None:
                for i, seat in enumerate(self.seats):
                    if seat.client == client and seat.token:
                        return seat.token, i    # rejoin keeps the same seat
            if self.phase != LOBBY:
                raise SessionFull("game already started")
            for i, seat in enumerate(self.seats):
                if seat.kind == "human" and seat.token is None:
                    seat.token = secrets.token_hex(8)
                    seat.client = client
                    self._tokens[seat.token] = i
                    if all(s.token for s in self.seats if s.kind == "human"):
                        self._begin_game()
                    self._push()
                    return seat.token, i
            raise SessionFull("all human seats taken")

    def _seat_for(self, token: str) -> int:
        if token not in self._tokens:
            raise UnknownToken("no seat for this token")
        return self._tokens[token]

    # -- game flow ------------------------------------------------------

    def _episode_seed(self) -> int:
        return self.seed if self.game_index == 0 else derive_seed(
            self.seed, "series", self.game_index)

    def _begin_game(self):
        seed = self._episode_seed()
        self.state = initial_state(self.config)
        self.rounds = []
        self.mechanism.begin_episode(self.config, substream(seed, "mechanism"))
        for i, seat in enumerate(self.seats):
            if seat.player is not None:
                seat.player.begin_episode(self.config, i, substream(seed, "player", i))
        self._rng_term = substream(seed, "termination")
        self._rng_bots = [substream(seed, "bot", i) for i in range(len(self.seats))]
        self._begin_round()

    def _begin_round(self):
        offers, retained = self.mechanism.propose(self.state, self.config)
        self.state = apply_offers(self.state, offers, retained, self.config)
        for i, seat in enumerate(self.seats):
            seat.staged = 0
            seat.submitted = None
            if seat.kind != "human":
                seat.submitted = self._machine_contribution(i)
        self.phase = AWAITING
        self.deadline = self.clock() + self.options.response_seconds
        self._push()
        self._maybe_resolve()

    def _machine_contribution(self, i: int) -> float:
        seat = self.seats[i]
        offer = float(self.state.pending_offers[i])
        if offer < self.config.exclusion_threshold:
            return 0.0
        if seat.kind == "bot":
            # uniformly random position on the same integer slider
            return float(self._rng_bots[i].integers(0, int(np.floor(offer)) + 1))
        view = PlayerView(seat=i, t=self.state.t, pool=self.state.pool_round_start,
                          offers=self.state.pending_offers,
                          prev_offers=self.state.prev_offers,
                          prev_contribs=self.state.prev_contribs)
        c = float(seat.player.contribute(view))
        if self.config.integer_actions:
            c = float(np.round(c))
        return float(min(max(c, 0.0), np.floor(offer) if self.config.integer_actions else offer))

    def _maybe_resolve(self):
        if self.phase == AWAITING and all(s.submitted is not None for s in self.seats):
            self._resolve_round()

    def _resolve_round(self):
        contribs = np.array([s.submitted for s in self.seats], dtype=np.float64)
        below = self.state.pending_offers < self.config.exclusion_threshold
        contribs[below] = 0.0
        self.state, record = apply_contributions(self.state, contribs, self.config)
        self.rounds.append(record)
        for i, seat in enumerate(self.seats):
            seat.kept_total += float(record.surpluses[i])
        terminated = self.state.terminated
        if not terminated and should_terminate(self.state, self.config, self._rng_term):
            self.state = dc_replace(self.state, terminated=True)
            terminated = True
        if terminated:
            self._finish_game()
        elif self.options.human_seats == 0 or self.options.overview_seconds <= 0:
            self._begin_round()
        else:
            self.phase = OVERVIEW
            self.deadline = self.clock() + self.options.overview_seconds
            self._push()

    def _finish_game(self):
        ids = [s.kind if s.kind != "human" else f"human{i}"
               for i, s in enumerate(self.seats)]
        self.logs.append(EpisodeLog(
            config=self.config, mechanism_id=self.mechanism.mechanism_id,
            player_ids=ids, rounds=list(self.rounds), seed=self._episode_seed()))
        self.game_index += 1
        if self.game_index < self.options.games_in_series:
            # next game in the series: fresh pool, same table
            for seat in self.seats:
                seat.kept_total = 0.0
            self._begin_game()
            return
        humans_left = any(s.kind == "human" for s in self.seats)
        if self.options.questionnaire and humans_left:
            self.phase = QUESTIONNAIRE
            self.deadline = None
        else:
            self.phase = ENDED
            self.deadline = None
        self._push()

    # -- human input ----------------------------------------------------

    def _check_active_human(self, i: int):
        seat = self.seats[i]
        if seat.kind != "human":
            raise Expired("seat was handed to a bot after repeated timeouts")
        return seat

    def _validate_amount(self, i: int, amount) -> int:
        offer = float(self.state.pending_offers[i])
        limit = int(np.floor(offer)) if offer >= self.config.exclusion_threshold else 0
        if isinstance(amount, bool) or not isinstance(amount, (int, float)):
            raise OutOfRange(f"amount must be an integer, got {amount!r}")
        if float(amount) != int(amount):
            raise OutOfRange(f"whole units only, got {amount!r}")
        a = int(amount)
        if not 0 <= a <= limit:
            raise OutOfRange(f"amount {a} outside [0, {limit}]")
        return a

    def stage(self, token: str, amount) -> None:
        """Mirror of the client's slider; what a first timeout records."""
        with self.lock:
            self.tick()
            i = self._seat_for(token)
            if self.phase != AWAITING:
                raise WrongPhase(f"cannot stage during {self.phase}")
            seat = self._check_active_human(i)
            if seat.submitted is not None:
                raise WrongPhase("already submitted this round")
            seat.staged = self._validate_amount(i, amount)

    def submit_contribution(self, token: str, amount) -> dict:
        with self.lock:
            i = self._seat_for(token)
            if self.phase == AWAITING and self.deadline is not None \
                    and self.clock() >= self.deadline:
                self.tick()
                raise Expired("the response window had already closed")
            if self.phase != AWAITING:
                raise WrongPhase(f"cannot submit during {self.phase}")
            seat = self._check_active_human(i)
            if seat.submitted is not None:
                raise WrongPhase("already submitted this round")
            a = self._validate_amount(i, amount)
            seat.submitted = float(a)
            seat.staged = a
            self._maybe_resolve()
            self._push()
            return {"ok": True, "recorded": a}

    def submit_questionnaire(self, token: str, ratings) -> dict:
        with self.lock:
            self.tick()
            i = self._seat_for(token)
            if self.phase != QUESTIONNAIRE:
                raise WrongPhase(f"cannot rate during {self.phase}")
            if i in self.questionnaires:
                raise WrongPhase("questionnaire already submitted")
            if (not isinstance(ratings, (list, tuple))
                    or len(ratings) != len(QUESTIONNAIRE_STATEMENTS)
                    or any(isinstance(r, bool) or not isinstance(r, int)
                           or not 1 <= r <= 5 for r in ratings)):
                raise BadRating(f"need {len(QUESTIONNAIRE_STATEMENTS)} ratings in 1..5")
            self.questionnaires[i] = [int(r) for r in ratings]
            if all(j in self.questionnaires
                   for j, s in enumerate(self.seats) if s.kind == "human"):
                self.phase = ENDED
            self._push()
            return {"ok": True}

    # -- clock ----------------------------------------------------------

    def tick(self, now: float | None = None) -> None:
        """Advance anything whose deadline has passed; safe to call anytime."""
        with self.lock:
            now = self.clock() if now is None else now
            while self.deadline is not None and now >= self.deadline:
                if self.phase == AWAITING:
                    self._fire_timeouts()
                elif self.phase == OVERVIEW:
                    self._begin_round()
                else:
                    break

    def _fire_timeouts(self):
        for i, seat in enumerate(self.seats):
            if seat.submitted is None:
                seat.timeouts += 1
                if seat.timeouts >= 2:
                    # permanent replacement; the session is tainted for analysis
                    seat.kind = "bot"
                    seat.player = None
                    self.dropout = True
                    seat.submitted = self._machine_contribution(i)
                    self.events.append({"event": "seat_dropped", "seat": i,
                                        "round": self.state.t})
                else:
                    offer = float(self.state.pending_offers[i])
                    limit = (int(np.floor(offer))
                             if offer >= self.config.exclusion_threshold else 0)
                    seat.submitted = float(min(seat.staged, limit))
                    self.events.append({"event": "timeout_recorded_staged", "seat": i,
                                        "round": self.state.t,
                                        "value": seat.submitted})
        self._resolve_round()

    # -- views -----------------------------------------------------------

    def remaining_seconds(self) -> float:
        if self.deadline is None:
            return 0.0
        return max(0.0, self.deadline - self.clock())

    def get_view(self, token: str) -> dict:
        with self.lock:
            self.tick()
            me = self._seat_for(token)
            return self._view_for(me)

    def _view_for(self, me: int) -> dict:
        """Everything seat `me` may know right now — and nothing more."""
        p = len(self.seats)
        base = {
            "schema_version": VIEW_SCHEMA_VERSION,
            "session_id": self.id,
            "phase": self.phase,
            "game_index": self.game_index,
            "games_in_series": self.options.games_in_series,
            "seat": me,
            "remaining_seconds": self.remaining_seconds(),
            "bonus_rate": self.options.bonus_rate,
            "growth_rate": self.config.growth_multiplier - 1.0,
            "instructions": INSTRUCTION_SCRIPTS.get(self.instruction_key),
        }
        if self.phase == LOBBY:
            joined = sum(1 for s in self.seats if s.kind != "human" or s.token)
            base.update({"joined": joined, "needed": p})
            return base
        if self.phase in (QUESTIONNAIRE, ENDED):
            seat = self.seats[me] if me < p else None
            base.update({
                "statements": list(QUESTIONNAIRE_STATEMENTS),
                "scale": [1, 2, 3, 4, 5],
                "answered": me in self.questionnaires,
                "your_points_total": round(seat.kept_total, 2) if seat else 0.0,
                "bonus_display": self._bonus(seat.kept_total) if seat else "£0.00",
            })
            return base
        # playing phases: rows are self-first; "You", then clockwise others
        order = [(me + j) % p for j in range(p)]
        last = self.rounds[-1] if self.rounds else None
        rows = []
        for rank, i in enumerate(order):
            row = {
                "label": "You" if i == me else str(rank + 1),
                "offer": float(self.state.pending_offers[i])
                         if self.phase == AWAITING else float(last.offers[i]),
                "prev_contribution": (float(self.state.prev_contribs[i])
                                      if self.state.t > 0 else None),
                "kept_total": round(self.seats[i].kept_total, 2),
            }
            if self.phase == OVERVIEW and last is not None:
                row["contribution"] = float(last.contributions[i])
                row["surplus"] = float(last.surpluses[i])
            rows.append(row)
        mine = self.seats[me]
        offer = (float(self.state.pending_offers[me]) if self.phase == AWAITING
                 else float(last.offers[me]))
        base.update({
            "round": self.state.t if self.phase == AWAITING else self.state.t - 1,
            "players": rows,
            "pool_before": float(self.state.pool_round_start) if self.phase == AWAITING
                           else float(last.pool_before),
            "retained_by_manager": float(self.state.pending_retained)
                                   if self.phase == AWAITING else float(last.retained),
            "your_offer": offer,
            "max_contribution": (int(np.floor(offer))
                                 if offer >= self.config.exclusion_threshold else 0),
            "staged": mine.staged,
            "submitted": mine.submitted is not None,
            "your_points_total": round(mine.kept_total, 2),
            "bonus_display": self._bonus(mine.kept_total),
        })
        if self.phase == OVERVIEW and last is not None:
            base["pool_after"] = float(last.pool_after)
        return base

    def _bonus(self, points: float) -> str:
        return f"£{points * self.options.bonus_rate:.2f}"

    # -- streaming -------------------------------------------------------

    def subscribe(self, token: str) -> queue.Queue:
        with self.lock:
            i = self._seat_for(token)
            q: queue.Queue = queue.Queue()
            self._subscribers.append((i, q))
            q.put(self._view_for(i))
            return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self.lock:
            self._subscribers = [(i, s) for i, s in self._subscribers if s is not q]

    def _push(self):
        for i, q in self._subscribers:
            q.put(self._view_for(i))

    # -- persistence -----------------------------------------------------

    def sidecar(self) -> dict:
        return {
            "schema_version": VIEW_SCHEMA_VERSION,
            "session_id": self.id,
            "mechanism_id": self.mechanism.mechanism_id,
            "instruction_key": self.instruction_key,
            "bonus_rate": self.options.bonus_rate,
            "dropout": self.dropout,
            "timeouts": [s.timeouts for s in self.seats],
            "final_seat_kinds": [s.kind for s in self.seats],
            "events": list(self.events),
            "questionnaires": {str(i): r for i, r in sorted(self.questionnaires.items())},
            "games_completed": len(self.logs),
        }

    def persist(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        written = []
        for gi, log in enumerate(self.logs):
            path = os.path.join(directory, f"session_{self.id}_game{gi}.log")
            write_episode_log(path, log)
            written.append(path)
        meta = os.path.join(directory, f"session_{self.id}.meta.json")
        with open(meta, "w", encoding="utf8") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(meta)
        return written


# -- service -------------------------------------------------------------


class SessionService:
    """Session registry plus the clone ensemble machine seats draw from."""

    def __init__(self, ensemble=None, clone_config=None, clock=time.monotonic,
                 save_dir: str | None = None, seed: int = 0):
        self.ensemble = list(ensemble) if ensemble else None
        self.clone_config = clone_config or bc1_config()
        self.clock = clock
        self.save_dir = save_dir
        self.seed = seed
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._created = 0

    def _clone_source(self, session_seed: int):
        if self.ensemble is None:
            return None
        members = self.ensemble
        cfg = self.clone_config

        def make(j: int):
            params = members[j % len(members)]
            return ClonePlayer(params, cfg, mode="categorical_bin", name=f"clone{j}")
        return make

    def create_session(self, mechanism_spec: dict, game_config: GameConfig,
                       options: SessionOptions) -> Session:
        mech = mechanism_from_spec(mechanism_spec)
        with self._lock:
            sid = f"{self._created:04d}-{secrets.token_hex(4)}"
            self._created += 1
            session_seed = derive_seed(self.seed, "session", self._created)
        session = Session(sid, game_config, mech, options, session_seed,
                          clock=self.clock, clone_source=self._clone_source(session_seed))
        with self._lock:
            self.sessions[sid] = session
        self._maybe_persist(session)
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(f"no session {session_id!r}")

    def tick_all(self):
        for s in list(self.sessions.values()):
            s.tick()
            self._maybe_persist(s)

    def _maybe_persist(self, session: Session):
        if self.save_dir and session.phase == ENDED and not getattr(session, "_saved", False):
            session.persist(self.save_dir)
            session._saved = True


# -- HTTP layer ----------------------------------------------------------


def build_app(experiment_config=None, ensemble=None, clone_config=None,
              clock=time.monotonic, save_dir=None, seed: int = 0):
    """FastAPI wrapper; defaults pull the clone ensemble from the experiment
    config's train-bc output when one is available."""
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse, StreamingResponse

    if ensemble is None and experiment_config is not None:
        bc_dir = experiment_config.bc_dir or os.path.join(
            experiment_config.out_dir, "bc")
        try:
            from .cli import _load_ensemble
            ensemble, clone_config = _load_ensemble(
                dc_replace(experiment_config, bc_dir=bc_dir))
        except FileNotFoundError:
            ensemble = None
    if save_dir is None and experiment_config is not None:
        save_dir = os.path.join(experiment_config.out_dir, "sessions")

    service = SessionService(ensemble=ensemble, clone_config=clone_config,
                             clock=clock, save_dir=save_dir, seed=seed)

    # deadlines are server-authoritative, so a served app must advance them
    # itself; tests that drive sessions by hand skip the lifespan ticker
    @asynccontextmanager
    async def _lifespan(app_):
        async def ticker():
            while True:
                await asyncio.sleep(TICK_SECONDS)
                service.tick_all()
        task = asyncio.create_task(ticker())
        try:
            yield
        finally:
            task.cancel()

    app = FastAPI(title="commonpool session host", lifespan=_lifespan)
    app.state.service = service

    @app.exception_handler(SessionError)
    async def _session_error(request: Request, exc: SessionError):
        return JSONResponse(status_code=exc.http_status,
                            content={"error": exc.code, "detail": exc.detail})

    def _game_config(payload: dict) -> GameConfig:
        raw = payload.get("game")
        base = (GameConfig.from_dict(raw) if raw
                else dc_replace(GameConfig(), integer_actions=True))
        if payload.get("termination") == "geometric":
            base = dc_replace(base, termination=GeometricAfterMin())
        return base

    @app.post("/sessions")
    async def create(payload: dict):
        spec = payload.get("mechanism", {"kind": "equal"})
        opts = SessionOptions(
            human_seats=int(payload.get("human_seats", 4)),
            games_in_series=int(payload.get("games_in_series", 1)),
            questionnaire=bool(payload.get("questionnaire", True)),
            bonus_rate=float(payload.get("bonus_rate", DEFAULT_BONUS_RATE)),
            response_seconds=float(payload.get("response_seconds",
                                               DEFAULT_RESPONSE_SECONDS)),
            overview_seconds=float(payload.get("overview_seconds",
                                               DEFAULT_OVERVIEW_SECONDS)),
            instruction_key=payload.get("instruction_key"))
        session = service.create_session(spec, _game_config(payload), opts)
        return {"schema_version": VIEW_SCHEMA_VERSION,
                "session_id": session.id,
                "mechanism_id": session.mechanism.mechanism_id,
                "instructions": INSTRUCTION_SCRIPTS.get(session.instruction_key),
                "phase": session.phase}

    @app.post("/sessions/{sid}/join")
    async def join(sid: str, payload: dict | None = None):
        session = service.get(sid)
        token, seat = session.join((payload or {}).get("client"))
        return {"token": token, "seat": seat, "phase": session.phase}

    @app.post("/sessions/{sid}/stage")
    async def stage(sid: str, payload: dict):
        session = service.get(sid)
        session.stage(payload.get("token", ""), payload.get("amount"))
        return {"ok": True}

    @app.post("/sessions/{sid}/submit-contribution")
    async def submit(sid: str, payload: dict):
        session = service.get(sid)
        out = session.submit_contribution(payload.get("token", ""),
                                          payload.get("amount"))
        service._maybe_persist(session)
        return out

    @app.post("/sessions/{sid}/submit-questionnaire")
    async def questionnaire(sid: str, payload: dict):
        session = service.get(sid)
        out = session.submit_questionnaire(payload.get("token", ""),
                                           payload.get("ratings"))
        service._maybe_persist(session)
        return out

    @app.get("/sessions/{sid}/view")
    async def view(sid: str, token: str):
        session = service.get(sid)
        v = session.get_view(token)
        service._maybe_persist(session)
        return v

    @app.get("/sessions/{sid}/stream")
    async def stream(sid: str, token: str, max_events: int | None = None,
                     poll_seconds: float = 15.0):
        # max_events bounds the stream so clients (and tests) can lean on
        # SSE auto-reconnect instead of holding one connection forever
        session = service.get(sid)
        q = session.subscribe(token)

        def gen():
            sent = 0
            try:
                while True:
                    try:
                        item = q.get(timeout=poll_seconds)
                    except queue.Empty:
                        yield ": keep-alive\n\n"
                        continue
                    yield f"data: {json.dumps(item)}\n\n"
                    sent += 1
                    if item.get("phase") == ENDED:
                        break
                    if max_events is not None and sent >= max_events:
                        break
            finally:
                session.unsubscribe(q)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.get("/admin/sessions")
    async def admin_list():
        return [{"session_id": s.id, "phase": s.phase,
                 "mechanism_id": s.mechanism.mechanism_id,
                 "round": 0 if s.state is None else s.state.t,
                 "game_index": s.game_index, "dropout": s.dropout}
                for s in service.sessions.values()]

    @app.get("/admin/sessions/{sid}")
    async def admin_inspect(sid: str):
        s = service.get(sid)
        return {"session_id": s.id, "phase": s.phase,
                "mechanism_id": s.mechanism.mechanism_id,
                "seats": [{"kind": seat.kind, "joined": seat.token is not None,
                           "timeouts": seat.timeouts,
                           "kept_total": round(seat.kept_total, 2)}
                          for seat in s.seats],
                "sidecar": s.sidecar()}

    return app
