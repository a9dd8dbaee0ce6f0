import math

import numpy as np
import pytest
from scipy import stats as sstats

from rwre.branching import sample_cycles
from rwre.constants import (
    TailEstimate,
    compose_c1,
    compose_constants,
    estimate_c3_conditional,
    estimate_c3_tail,
    estimate_cycle_mean,
    hill_diagnostic,
    write_estimates_csv,
)
from rwre.env_model import Beta, CumulantProfile, Deterministic, Regime, TwoPoint
from rwre.errors import GridUnstable, NotStabilized, RegimeMismatch, TooFewSamples
from rwre.perpetuity import Estimate, kesten_constant
from rwre.rng import RngStream


def exact_cycle_mean_constant_multiplier(a=0.5, max_state=200):
    """Absorption-time oracle on the truncated chain for constant A.

    The chain moves z -> NegBinomial(z + 1, w) with w = 1/(1 + a); solving
    the linear system for expected hitting times of 0 gives the exact mean
    regeneration time up to truncation error.
    """
    w = 1.0 / (1.0 + a)
    states = np.arange(max_state + 1)
    # transition pmf rows for origins 0..max_state (mass beyond truncated)
    pmf = np.empty((max_state + 1, max_state + 1))
    for z in states:
        pmf[z] = sstats.nbinom.pmf(states, z + 1, w)
    h = np.zeros(max_state + 1)
    # h[z] = 1 + sum_{z'>=1} P(z -> z') h[z'], solved on states 1..max_state
    q = pmf[1:, 1:]
    h[1:] = np.linalg.solve(np.eye(max_state) - q, np.ones(max_state))
    return 1.0 + pmf[0, 1:] @ h[1:]


class TestCycleMean:
    def test_at_least_one(self):
        est = estimate_cycle_mean(Beta(3, 1), 20_000, RngStream(70, 0))
        assert est.estimate >= 1.0

    def test_constant_multiplier_matches_linear_solve_oracle(self):
        oracle = exact_cycle_mean_constant_multiplier()
        est = estimate_cycle_mean(Deterministic(0.5), 100_000, RngStream(71, 0))
        assert abs(est.estimate - oracle) < 3 * est.se

    def test_se_scaling(self):
        # standard error scales like replicas^(-1/2): quadrupling halves it
        small = estimate_cycle_mean(Beta(3, 1), 25_000, RngStream(72, 0))
        big = estimate_cycle_mean(Beta(3, 1), 100_000, RngStream(72, 1))
        assert abs(big.se / small.se - 0.5) < 0.2 * 0.5


class TestCycleTailPlateau:
    def test_plateau_flat_on_calibrated_grid(self):
        cycles = sample_cycles(Beta(3, 1), 2_000_000, RngStream(73, 0))
        est = estimate_c3_tail(Beta(3, 1), 2.0, np.geomspace(40, 200, 5),
                               2_000_000, RngStream(73, 1), cycles=cycles)
        assert est.detail["plateau_ratio"] < 1.5
        assert est.estimate > 0

    def test_pre_asymptotic_grid_rejected(self):
        cycles = sample_cycles(Beta(3, 1), 100_000, RngStream(74, 0))
        with pytest.raises(GridUnstable):
            estimate_c3_tail(Beta(3, 1), 2.0, (0.2, 0.5, 0.9), 100_000,
                             RngStream(74, 1), cycles=cycles)

    def test_survival_monotone_in_threshold(self):
        cycles = sample_cycles(Beta(3, 1), 50_000, RngStream(75, 0))
        xs = np.geomspace(1, 100, 12)
        surv = [(cycles.sums > x).mean() for x in xs]
        assert all(b <= a for a, b in zip(surv, surv[1:]))


class TestCycleTailConditional:
    def test_routes_agree(self):
        spec = Beta(3, 1)
        replicas = 400_000
        cycles = sample_cycles(spec, replicas, RngStream(76, 0),
                               t_grid=(4, 8, 16, 32))
        c2 = kesten_constant(spec, 200_000, RngStream(76, 1))
        cond = estimate_c3_conditional(spec, 2.0, c2, (4, 8, 16, 32),
                                       replicas, RngStream(76, 2), cycles=cycles)
        tail = estimate_c3_tail(spec, 2.0, np.geomspace(40, 200, 5),
                                replicas, RngStream(76, 3), cycles=cycles)
        comb = math.sqrt(cond.se ** 2 + tail.se ** 2)
        assert abs(cond.estimate - tail.estimate) < 2 * comb

    def test_conditional_moment_dominates_level(self):
        spec = Beta(3, 1)
        c2 = Estimate(value=1.0, se=0.0, replicas=1)
        est = estimate_c3_conditional(spec, 2.0, c2, (4, 8, 16), 200_000,
                                      RngStream(77, 0))
        for point in est.detail["curve"]:
            if point["hits"]:
                assert point["conditional"] >= point["t"] ** 2.0

    def test_unstable_levels_rejected(self):
        # levels far below the asymptote move by much more than 10% with
        # tiny Monte Carlo error, so the guard must fire
        spec = Beta(3, 1)
        c2 = Estimate(value=1.0, se=0.0, replicas=1)
        with pytest.raises(NotStabilized):
            estimate_c3_conditional(spec, 2.0, c2, (0.5, 1.0), 2_000_000,
                                    RngStream(78, 0))


class TestComposition:
    def _c1(self, value=3.0, se=0.3):
        return TailEstimate(quantity="progeny_tail_per_immigrant",
                            estimate=value, se=se, replicas=1000,
                            method="composed")

    def test_compose_c1_ratio_and_se(self):
        c3 = TailEstimate("cycle_sum_tail", 8.0, 0.8, 1000, "empirical-tail-plateau")
        nu = TailEstimate("cycle_mean", 2.0, 0.02, 1000, "plain-mc")
        c1 = compose_c1(c3, nu)
        assert c1.estimate == pytest.approx(4.0)
        rel = math.sqrt(0.1 ** 2 + 0.01 ** 2)
        assert c1.se == pytest.approx(4.0 * rel)

    def test_walk_constant_above_index_one(self):
        prof = CumulantProfile(alpha=2.0, rho0=1.5, mean_A=0.5, mean_logA=-1.5,
                               speed_v=1 / 3, regime=Regime.BALLISTIC,
                               alpha_inf=3.0, rho_inf=math.inf,
                               arithmetic_flag=False)
        out = compose_constants(prof, self._c1())
        assert out["c_alpha"].estimate == pytest.approx((2 / 3) ** 2 * 3.0)
        assert out["c_alpha"].se == pytest.approx((2 / 3) ** 2 * 0.3)

    def test_walk_constant_at_or_below_index_one(self):
        prof = CumulantProfile(alpha=0.7, rho0=0.3, mean_A=1.125, mean_logA=-0.35,
                               speed_v=0.0, regime=Regime.SUB_BALLISTIC,
                               alpha_inf=math.inf, rho_inf=math.log(2),
                               arithmetic_flag=True)
        out = compose_constants(prof, self._c1())
        assert out["c_alpha"].estimate == pytest.approx(3.0)

    def test_zero_input_gives_zero(self):
        prof = CumulantProfile(alpha=0.7, rho0=0.3, mean_A=1.125, mean_logA=-0.35,
                               speed_v=0.0, regime=Regime.SUB_BALLISTIC,
                               alpha_inf=math.inf, rho_inf=math.log(2),
                               arithmetic_flag=False)
        out = compose_constants(prof, self._c1(value=0.0, se=0.0))
        assert out["c_alpha"].estimate == 0.0

    def test_regime_mismatch(self):
        prof = CumulantProfile(alpha=1.5, rho0=0.5, mean_A=1.0, mean_logA=-0.2,
                               speed_v=0.0, regime=Regime.BOUNDARY,
                               alpha_inf=math.inf, rho_inf=1.0,
                               arithmetic_flag=False)
        with pytest.raises(RegimeMismatch):
            compose_constants(prof, self._c1())

    def test_se_propagation_is_linear(self):
        one = compose_constants(
            CumulantProfile(2.0, 1.5, 0.5, -1.5, 1 / 3, Regime.BALLISTIC,
                            3.0, math.inf, False), self._c1(se=0.3))
        two = compose_constants(
            CumulantProfile(2.0, 1.5, 0.5, -1.5, 1 / 3, Regime.BALLISTIC,
                            3.0, math.inf, False), self._c1(se=0.6))
        assert two["c_alpha"].se == pytest.approx(2 * one["c_alpha"].se)


class TestHill:
    def test_pareto_synthetic(self):
        u = RngStream(79, 0).generator().random(100_000)
        samples = u ** -0.5  # exact Pareto with tail index 2
        est = hill_diagnostic(samples, k_fraction=0.05)
        assert abs(est.estimate - 2.0) < 3 * est.se

    def test_cycle_sums_recover_tail_index(self):
        cycles = sample_cycles(Beta(3, 1), 5_000_000, RngStream(80, 0))
        est = hill_diagnostic(cycles.sums.astype(float), k_fraction=5e-4)
        assert abs(est.estimate - 2.0) < 3 * est.se

    def test_degenerate_input_rejected(self):
        with pytest.raises(TooFewSamples):
            hill_diagnostic(np.full(10_000, 7.0), k_fraction=0.05)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            hill_diagnostic(np.arange(1, 100), k_fraction=0.05)


class TestCsv:
    def test_schema(self, tmp_path):
        est = TailEstimate("cycle_mean", 1.5, 0.01, 1000, "plain-mc",
                           grid=(2.0, 8.0), flags=("arithmetic_support",))
        out = tmp_path / "constants.csv"
        write_estimates_csv(out, [est])
        lines = out.read_text().splitlines()
        assert lines[0] == "quantity,method,estimate,se,replicas,grid_lo,grid_hi,flags"
        assert lines[1].startswith("cycle_mean,plain-mc,1.5,0.01,1000,2.0,8.0")
