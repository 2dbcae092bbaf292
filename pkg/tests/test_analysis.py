import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from commonpool import analysis
from commonpool.analysis import (
    DegenerateInput, NegativeValue, exclusion_events, fdr_adjust, game_metrics,
    gini, lagged_offer_regression, pearson, rank_sum_test,
    reciprocation_ratio_profile,
)
from commonpool.game import EpisodeLog, GameConfig, RoundRecord, run_episode
from commonpool.mechanisms import equal_mechanism, proportional_mechanism
from commonpool.players import FreeRider, Sustainer


def gini_bruteforce(x):
    x = np.asarray(x, dtype=np.float64)
    if x.sum() == 0:
        return 0.0
    acc = 0.0
    for a in x:
        for b in x:
            acc += abs(a - b)
    return acc / (2 * len(x) * x.sum())


def make_log(offer_rows, contrib_rows, pool_before=None, config=None):
    """Hand-built log from per-trial offers/contributions."""
    config = config or GameConfig()
    rounds = []
    pool = config.initial_pool
    for t, (offers, contribs) in enumerate(zip(offer_rows, contrib_rows)):
        offers = np.asarray(offers, dtype=np.float64)
        contribs = np.asarray(contribs, dtype=np.float64)
        pb = pool if pool_before is None else pool_before[t]
        pa = min(config.initial_pool,
                 max(0.0, pb - offers.sum() + config.growth_multiplier * contribs.sum()))
        rounds.append(RoundRecord(t=t, pool_before=pb, offers=offers, retained=0.0,
                                  contributions=contribs, surpluses=offers - contribs,
                                  pool_after=pa))
        pool = pa
    return EpisodeLog(config=config, mechanism_id="handmade", player_ids=["a", "b", "c", "d"],
                      rounds=rounds, seed=0)


class TestGini:
    def test_equality(self):
        assert gini([1, 1, 1, 1]) == 0.0

    def test_single_holder(self):
        assert gini([1, 0, 0, 0]) == pytest.approx(0.75)

    def test_worked_surplus_column(self):
        assert gini([36, 50, 50, 22]) == pytest.approx(196 / 1264)

    def test_all_zero_convention(self):
        assert gini([0, 0, 0, 0]) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(NegativeValue):
            gini([1, -1, 0, 0])

    def test_upper_bound(self):
        # max inequality for n=4 approaches (n-1)/n
        assert gini([100, 0, 0, 0]) == pytest.approx(0.75)

    @given(st.lists(st.floats(0, 1000), min_size=2, max_size=12))
    @settings(max_examples=300, deadline=None)
    def test_matches_bruteforce(self, xs):
        assert gini(xs) == pytest.approx(gini_bruteforce(xs), abs=1e-12)


class TestGameMetrics:
    def test_active_count(self):
        log = make_log([[50, 0.5, 1, 20]], [[0, 0, 0, 0]])
        rep = game_metrics(log)
        assert rep.trial_active[0] == 3

    def test_depletion_trial_one_indexed(self):
        log = make_log([[1, 1, 1, 1]] * 3, [[0, 0, 0, 0]] * 3,
                       pool_before=[200.0, 80.0, 0.4])
        rep = game_metrics(log)
        assert rep.depletion_trial == 3
        assert not rep.sustained

    def test_sustained_when_never_depleted(self):
        cfg = GameConfig(max_rounds=10)
        log = run_episode(cfg, equal_mechanism(), [Sustainer() for _ in range(4)], seed=0)
        rep = game_metrics(log)
        assert rep.sustained and rep.depletion_trial is None
        assert rep.active_players_mean == 4.0

    def test_equal_offers_zero_gini(self):
        log = make_log([[50, 50, 50, 50]], [[10, 10, 10, 10]])
        assert game_metrics(log).trial_offer_gini[0] == 0.0

    def test_purity(self):
        cfg = GameConfig(max_rounds=8)
        log = run_episode(cfg, proportional_mechanism(),
                          [Sustainer(keep_frac=0.5) for _ in range(4)], seed=1)
        r1, r2 = game_metrics(log), game_metrics(log)
        assert r1.total_surplus == r2.total_surplus
        np.testing.assert_array_equal(r1.trial_pool, r2.trial_pool)

    def test_schema_check(self):
        log = make_log([[1, 1, 1, 1]], [[0, 0, 0, 0]])
        log.schema_version = "2"
        with pytest.raises(analysis.SchemaVersionMismatch):
            game_metrics(log)


class TestExclusionEvents:
    def test_basic_event(self):
        offers = [[50] * 4, [0.5, 50, 50, 50], [0.2, 50, 50, 50], [30, 50, 50, 50]]
        contribs = [[14, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]
        events = exclusion_events(make_log(offers, contribs))
        assert len(events) == 1
        ev = events[0]
        assert ev.player == 0
        assert ev.start_trial == 2
        assert ev.duration == 2
        assert not ev.permanent
        assert ev.prior_reciprocation == 14.0
        assert ev.reinclusion_offer == 30.0

    def test_permanent_grim_trigger(self):
        cfg = GameConfig(max_rounds=10)
        log = run_episode(cfg, proportional_mechanism(),
                          [FreeRider(), Sustainer(), Sustainer(), Sustainer()], seed=0)
        events = [e for e in exclusion_events(log) if e.player == 0]
        assert len(events) == 1
        assert events[0].permanent
        assert events[0].reinclusion_offer is None

    def test_no_events_when_all_active(self):
        log = make_log([[50] * 4] * 5, [[10] * 4] * 5)
        assert exclusion_events(log) == []

    def test_duration_bounded_by_trials(self):
        cfg = GameConfig(max_rounds=12)
        log = run_episode(cfg, proportional_mechanism(),
                          [FreeRider() for _ in range(4)], seed=0)
        for ev in exclusion_events(log):
            assert 1 <= ev.duration <= len(log.rounds)
        by_player = {}
        for ev in exclusion_events(log):
            by_player.setdefault(ev.player, 0)
            by_player[ev.player] += ev.duration
        for total in by_player.values():
            assert total <= len(log.rounds)

    def test_permanent_events_end_at_final_trial(self):
        cfg = GameConfig(max_rounds=9)
        log = run_episode(cfg, proportional_mechanism(),
                          [FreeRider(), Sustainer(), Sustainer(), Sustainer()], seed=2)
        for ev in exclusion_events(log):
            if ev.permanent:
                assert ev.start_trial + ev.duration - 1 == len(log.rounds)


class TestLaggedRegression:
    def test_recovers_planted_coefficient(self):
        rng = np.random.default_rng(0)
        logs = []
        for _ in range(30):
            contribs = rng.uniform(0, 40, size=(14, 4))
            offers = np.zeros((14, 4))
            offers[0] = 50.0
            for t in range(1, 14):
                offers[t] = 2.0 * contribs[t - 1] + rng.normal(0, 0.5, 4)
            offers = np.clip(offers, 0, None)
            logs.append(make_log(offers.tolist(), contribs.tolist(),
                                 pool_before=[200.0] * 14))
        res = lagged_offer_regression(logs)
        assert res.lags == tuple(range(-4, 5))
        assert res.weight_at(-1) == pytest.approx(2.0, abs=0.1)
        for lag in res.lags:
            if lag != -1:
                assert abs(res.weight_at(lag)) < 0.1

    def test_window_trials_only(self):
        # pooled design needs several games: one game is 4 rows vs 10 columns
        rng = np.random.default_rng(1)
        logs = [make_log(rng.uniform(1, 50, (40, 4)).tolist(),
                         rng.uniform(0, 1, (40, 4)).tolist(),
                         pool_before=[200.0] * 40)
                for _ in range(5)]
        res = lagged_offer_regression(logs)
        assert res.trials[0] == 5
        assert res.trials[-1] == 36

    def test_singular_design_skipped(self):
        # constant contributions: all lag columns collinear with intercept
        logs = [make_log([[50, 40, 30, 20]] * 12, [[5, 5, 5, 5]] * 12,
                         pool_before=[200.0] * 12)]
        res = lagged_offer_regression(logs)
        assert res.trials == []
        assert len(res.skipped_trials) > 0


class TestReciprocationProfile:
    def test_sustainer_ratio(self):
        cfg = GameConfig(max_rounds=10)
        logs = [run_episode(cfg, equal_mechanism(), [Sustainer() for _ in range(4)], seed=s)
                for s in range(2)]
        prof = reciprocation_ratio_profile(logs, m=1.4)
        assert prof["reference"] == pytest.approx(1 / 1.4)
        assert len(prof["rows"]) == 1
        row = prof["rows"][0]
        assert row["active_count"] == 4
        assert row["mean_rr"] == pytest.approx(1 / 1.4, abs=1e-9)

    def test_free_rider_ratio_zero_and_omission(self):
        cfg = GameConfig(max_rounds=6)
        log = run_episode(cfg, equal_mechanism(), [FreeRider() for _ in range(4)], seed=0)
        prof = reciprocation_ratio_profile([log], m=1.4)
        # round 0: everyone active, rr 0; afterwards pool is empty
        assert prof["rows"][0]["mean_rr"] == 0.0
        assert prof["omitted_trials"] == 5

    def test_full_reciprocation_ratio_one(self):
        class FullBack(Sustainer):
            def __init__(self):
                super().__init__(keep_frac=0.0)

        cfg = GameConfig(max_rounds=5)
        log = run_episode(cfg, equal_mechanism(), [FullBack() for _ in range(4)], seed=0)
        prof = reciprocation_ratio_profile([log], m=1.4)
        assert prof["rows"][0]["mean_rr"] == pytest.approx(1.0)

    def test_rejects_non_growing(self):
        with pytest.raises(ValueError):
            reciprocation_ratio_profile([], m=1.0)


class TestStats:
    def test_identical_groups_null(self):
        z, p = rank_sum_test([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
        assert z == pytest.approx(0.0, abs=1e-12)
        assert p == pytest.approx(1.0)

    def test_separated_groups_extreme(self):
        a = list(range(1, 41))
        b = list(range(41, 81))
        z, p = rank_sum_test(a, b)
        # exact rank computation: W_A = 820, mu = 1620, sigma = sqrt(10800)
        assert z == pytest.approx((820 - 1620) / np.sqrt(10800))
        assert p < 1e-13

    def test_matches_scipy_tie_corrected(self):
        import scipy.stats

        rng = np.random.default_rng(0)
        a = np.round(rng.uniform(0, 10, 30), 0)
        b = np.round(rng.uniform(2, 12, 25), 0)
        z, p = rank_sum_test(a, b)
        ref = scipy.stats.mannwhitneyu(a, b, use_continuity=False,
                                       method="asymptotic", alternative="two-sided")
        assert p == pytest.approx(ref.pvalue, rel=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            rank_sum_test([3, 3, 3], [3, 3, 3])
        with pytest.raises(DegenerateInput):
            rank_sum_test([1], [2, 3])

    def test_pearson_linear(self):
        x = np.arange(10.0)
        r, p = pearson(x, 2 * x)
        assert r == pytest.approx(1.0)
        assert p < 1e-9

    def test_fdr_known_example(self):
        q = fdr_adjust([0.01, 0.02, 0.03, 0.04])
        np.testing.assert_allclose(q, [0.04, 0.04, 0.04, 0.04])

    def test_fdr_order_and_bounds(self):
        p = [0.001, 0.5, 0.04, 0.9]
        q = fdr_adjust(p)
        assert np.all(q >= p)
        assert np.all(q <= 1.0)
        # adjusted values preserve the significance ordering
        assert np.argsort(q).tolist() == np.argsort(p).tolist()


class TestReports:
    def test_write_csv_and_metrics_rows(self, tmp_path):
        cfg = GameConfig(max_rounds=5)
        logs = [run_episode(cfg, equal_mechanism(), [Sustainer() for _ in range(4)], seed=s)
                for s in range(3)]
        rows = analysis.metrics_rows(logs)
        path = tmp_path / "per_game_metrics.csv"
        analysis.write_csv(path, rows, analysis.METRICS_COLUMNS)
        text = path.read_text().strip().splitlines()
        assert text[0] == ",".join(analysis.METRICS_COLUMNS)
        assert len(text) == 4
