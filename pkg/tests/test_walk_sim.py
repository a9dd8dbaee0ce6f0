import math

import numpy as np
import pytest

from rwre.branching import sample_total_progeny
from rwre.env_model import Beta, Deterministic, TwoPoint
from rwre.errors import HorizonExceeded, NotTransient
from rwre.harness import ks_critical_value
from rwre.rng import RngStream
from rwre.walk_sim import (
    QuenchedEnv,
    batch_hits,
    batch_positions,
    longest_excursion,
    position_after,
    run_until_hit,
)
from scipy import stats as sstats


class TestHitRecords:
    @pytest.mark.parametrize("spec", [Beta(3, 1), TwoPoint(2, 0.25, 0.5),
                                      Deterministic(0.5)])
    def test_step_count_identity_exact(self, spec):
        for r in range(40):
            env = QuenchedEnv(spec, RngStream(3, 0).child(r))
            rec = run_until_hit(env, 30, RngStream(3, 1).child(r))
            assert rec.t_n == 30 + 2 * rec.steps_left_total
            assert rec.steps_left_total == sum(rec.left_counts.values())
            assert all(i < 30 for i in rec.left_counts)
            assert all(i > rec.min_site for i in rec.left_counts)

    def test_batch_identity_exact(self):
        t, u, _ = batch_hits(Beta(3, 1), 50, 3000, RngStream(4, 0))
        assert np.array_equal(t, 50 + 2 * u)

    def test_monotone_trajectory(self):
        # essentially-always-right medium: no left steps, minimal hitting time
        env = QuenchedEnv(Deterministic(1e-9), RngStream(5, 0))
        rec = run_until_hit(env, 25, RngStream(5, 1))
        assert rec.t_n == 25
        assert rec.left_counts == {}
        assert rec.min_site == 0

    def test_quenched_determinism(self):
        for _ in range(2):
            recs = []
            for _ in range(2):
                env = QuenchedEnv(Beta(3, 1), RngStream(6, 0))
                recs.append(run_until_hit(env, 40, RngStream(6, 1)))
            assert recs[0] == recs[1]

    def test_environment_is_function_of_stream_not_exploration(self):
        a = QuenchedEnv(Beta(3, 1), RngStream(7, 0))
        b = QuenchedEnv(Beta(3, 1), RngStream(7, 0))
        b._table.ensure(-500, 900)  # force extensions in a different order
        a._table.ensure(-500, 0)
        for site in (-500, -37, 0, 11, 250, 899):
            assert a.omega_at(site) == b.omega_at(site)

    def test_hitting_time_mean_biased_walk(self):
        # E T_n = n / v for the constant-multiplier walk
        t, _, _ = batch_hits(Deterministic(0.5), 100, 10_000, RngStream(8, 0))
        se = t.std(ddof=1) / math.sqrt(t.size)
        assert abs(t.mean() - 300.0) < 3 * se

    def test_horizon_cap_raises(self):
        env = QuenchedEnv(Beta(3, 1), RngStream(9, 0))
        with pytest.raises(HorizonExceeded):
            run_until_hit(env, 10 ** 6, RngStream(9, 1), max_steps=100)

    def test_transience_gate(self):
        with pytest.raises(NotTransient):
            QuenchedEnv(Deterministic(2.0), RngStream(10, 0))

    def test_json_shape(self):
        env = QuenchedEnv(Beta(3, 1), RngStream(11, 0))
        rec = run_until_hit(env, 20, RngStream(11, 1))
        doc = rec.to_json()
        assert set(doc) == {"n", "T_n", "U"}
        assert doc["n"] == 20 and doc["T_n"] == rec.t_n
        sites = [s for s, _ in doc["U"]]
        assert sites == sorted(sites)
        assert all(c > 0 for _, c in doc["U"])


class TestPositions:
    def test_zero_steps(self):
        env = QuenchedEnv(Beta(3, 1), RngStream(12, 0))
        assert position_after(env, 0, RngStream(12, 1)) == 0

    def test_parity(self):
        for steps in (7, 12, 501):
            xs = batch_positions(Beta(3, 1), steps, 400, RngStream(13, steps))
            assert np.all((xs + steps) % 2 == 0)

    def test_speed_biased_walk(self):
        # LLN speed: mean X_n / n near (1 - A)/(1 + A) = 1/3
        n = 900
        xs = batch_positions(Deterministic(0.5), n, 10_000, RngStream(14, 0))
        se = xs.std(ddof=1) / math.sqrt(xs.size)
        assert abs(xs.mean() - n / 3) < 3 * se

    def test_batch_replay(self):
        a = batch_positions(Beta(3, 1), 100, 500, RngStream(15, 0))
        b = batch_positions(Beta(3, 1), 100, 500, RngStream(15, 0))
        assert np.array_equal(a, b)


class TestExcursions:
    def test_monotone_walk_has_no_excursion(self):
        env = QuenchedEnv(Deterministic(1e-9), RngStream(16, 0))
        stat = longest_excursion(env, 10, 200, RngStream(16, 1))
        assert stat.depth == 0

    def test_depth_distribution_biased_walk(self):
        # homogeneous gambler's ruin: P(depth > k) = (q/p)^(k+1) = 2^-(k+1)
        replicas = 50_000
        depths = np.empty(replicas, dtype=np.int64)
        for r in range(replicas):
            env = QuenchedEnv(Deterministic(0.5), RngStream(17, 0).child(r))
            depths[r] = longest_excursion(env, 5, 700, RngStream(17, 1).child(r)).depth
        p1 = (depths >= 1).mean()
        se = math.sqrt(p1 * (1 - p1) / replicas)
        assert abs(p1 - 0.5) < 3 * se
        # log-survival slope is near log(q/p) = -log 2 and below log(E A) + 0.1
        ks = np.arange(1, 10)
        surv = np.array([(depths > k).mean() for k in ks])
        assert (surv > 0).all()
        slope = np.polyfit(ks, np.log(surv), 1)[0]
        assert slope <= math.log(0.5) + 0.1


class TestDistributionalIdentity:
    def test_hit_time_matches_branching_representation(self):
        # annealed law of the hitting time equals 2 * (total progeny) + n
        n, reps = 50, 4000
        t, u, _ = batch_hits(Beta(3, 1), n, reps, RngStream(18, 0))
        w = sample_total_progeny(Beta(3, 1), n, reps, RngStream(18, 1))
        crit = ks_critical_value(reps, reps)
        assert sstats.ks_2samp(t, 2 * w + n, method="asymp").statistic < crit
        assert sstats.ks_2samp(u, w, method="asymp").statistic < crit
        se = math.sqrt(t.var(ddof=1) / reps + (2 * w + n).var(ddof=1) / reps)
        assert abs(t.mean() - (2 * w + n).mean()) < 3 * se
