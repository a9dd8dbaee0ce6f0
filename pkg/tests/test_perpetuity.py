import math

import numpy as np
import pytest

from rwre.env_model import Beta, Deterministic, TwoPoint, legendre, solve_alpha
from rwre.errors import NotTransient, TiltUnavailable
from rwre.perpetuity import (
    TiltedStream,
    approx_Y_inf,
    kesten_constant,
    run_perpetuity,
    sample_perpetuity_tails,
    tilted_product_tail,
    truncation_order,
    window_negligibility,
)
from rwre.rng import RngStream


class TestRecursions:
    def test_backward_partial_sums_constant_multiplier(self):
        path = run_perpetuity(Deterministic(0.5), 4, RngStream(50, 0))
        assert path.backward[4] == pytest.approx(0.96875, abs=1e-15)

    def test_forward_recursion_exact(self):
        path = run_perpetuity(Beta(3, 1), 60, RngStream(51, 0))
        assert path.forward[0] == path.multipliers[0]
        for k in range(1, 61):
            assert path.forward[k] == \
                path.multipliers[k] * (path.forward[k - 1] + 1.0)

    def test_product_telescoping_exact(self):
        path = run_perpetuity(Beta(3, 1), 40, RngStream(52, 0))
        for j in range(1, 41):
            assert path.products[j] == path.products[j - 1] * path.multipliers[j]

    def test_backward_nondecreasing(self):
        path = run_perpetuity(Beta(3, 1), 40, RngStream(53, 0))
        assert np.all(np.diff(path.backward) >= 0)

    def test_backward_mean_geometric_series(self):
        # E of the partial sum at 60 is nearly rho/(1-rho) = 1
        vals = np.concatenate([
            run_perpetuity(Beta(3, 1), 60, RngStream(54, r)).backward[-1:]
            for r in range(4000)])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - 1.0) < 3 * se

    def test_forward_backward_same_law_first_two_moments(self):
        n, reps = 30, 100_000
        gen = RngStream(55, 0).generator()
        a = Beta(3, 1).sample_A(gen, (reps, n + 1))
        backward = np.cumprod(a, axis=1).sum(axis=1)
        # forward chain value at n equals the reversed-product sum pathwise
        forward = np.cumprod(a[:, ::-1], axis=1).sum(axis=1)
        for moment in (1, 2):
            x, y = backward ** moment, forward ** moment
            se = math.sqrt(x.var(ddof=1) / reps + y.var(ddof=1) / reps)
            assert abs(x.mean() - y.mean()) < 3 * se


class TestTruncation:
    def test_order_for_constant_multiplier(self):
        assert truncation_order(Deterministic(0.5), 1e-6) == 20

    def test_value_close_to_limit(self):
        val, n_terms = approx_Y_inf(Deterministic(0.5), 1e-6, RngStream(56, 0))
        assert n_terms == 20
        assert abs(val - 1.0) < 1e-6

    def test_monotone_in_truncation_order_on_shared_stream(self):
        coarse, n1 = approx_Y_inf(Beta(3, 1), 1e-4, RngStream(57, 0))
        fine, n2 = approx_Y_inf(Beta(3, 1), 1e-6, RngStream(57, 0))
        assert n1 < n2
        assert coarse <= fine

    def test_transience_required(self):
        with pytest.raises(NotTransient):
            truncation_order(Deterministic(2.0), 1e-6)


class TestKestenConstant:
    def test_beta_3_1_equals_one(self):
        est = kesten_constant(Beta(3, 1), 200_000, RngStream(58, 0))
        assert est.meta["denominator"] == pytest.approx(3.0, abs=1e-8)
        assert abs(est.value - 1.0) < 3 * est.se

    def test_unit_tail_index_numerator_is_telescoping(self):
        # with E A = 1 the numerator (y+1)^1 - y^1 is identically 1
        spec = TwoPoint(1.5, 0.5, 0.5)
        alpha = solve_alpha(spec)
        assert alpha == pytest.approx(1.0, abs=1e-9)
        est = kesten_constant(spec, 10_000, RngStream(59, 0))
        assert est.se < 1e-8  # residual spread only from the 1e-10 root error
        expected = 1.0 / spec.cumulant_prime(1.0)
        assert est.value == pytest.approx(expected, rel=1e-8)

    def test_insensitive_to_truncation_tolerance(self):
        a = kesten_constant(Beta(3, 1), 150_000, RngStream(60, 0), tol=1e-4)
        b = kesten_constant(Beta(3, 1), 150_000, RngStream(60, 1), tol=1e-6)
        assert abs(a.value - b.value) < 2 * math.sqrt(a.se ** 2 + b.se ** 2)


class TestTilting:
    def test_tilted_stream_requires_unit_moment(self):
        with pytest.raises(TiltUnavailable):
            TiltedStream(Beta(3, 1), 1.5)

    def test_tilted_stream_weight_tracks_product(self):
        ts = TiltedStream(Beta(3, 1), 2.0)
        gen = RngStream(61, 0).generator()
        a = ts.draw(gen, 12)
        assert ts.weight() == pytest.approx(float(np.prod(a)) ** -2.0, rel=1e-9)

    def test_tilted_atom_frequencies(self):
        spec = TwoPoint(2, 0.25, 0.5)
        alpha = solve_alpha(spec)
        tilted = spec.tilted(alpha)
        draws = tilted.sample_A(RngStream(62, 0).generator(), 200_000)
        expect = 0.5 * 2.0 ** alpha  # unnormalized; the pair normalizes to 1
        total = expect + 0.5 * 0.25 ** alpha
        p = expect / total
        freq = (draws == 2.0).mean()
        assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / draws.size)

    def test_tilted_beta_is_conjugate(self):
        assert Beta(3, 1).tilted(2.0) == Beta(1.0, 3.0)


class TestProductTail:
    def test_trivial_threshold(self):
        # atoms bounded away from 0 keep the reweighting variance finite
        spec = TwoPoint(2, 0.25, 0.5)
        est = tilted_product_tail(spec, 6, 1e-300, 100_000, RngStream(63, 0))
        assert abs(est.value - 1.0) < 3 * est.se

    def test_unbiased_against_plain_mc(self):
        # mild slope so the plain arm resolves the probability
        spec = Beta(3, 1)
        n, rho = 8, 0.45
        x = math.exp(n * rho)
        tilted = tilted_product_tail(spec, n, x, 200_000, RngStream(64, 0))
        gen = RngStream(64, 1).generator()
        s = np.log(spec.sample_A(gen, (2_000_000, n))).sum(axis=1)
        plain = (s > math.log(x)).mean()
        se_plain = math.sqrt(plain * (1 - plain) / s.size)
        assert abs(tilted.value - plain) < 3 * math.sqrt(tilted.se ** 2 + se_plain ** 2)

    def test_bahadur_rao_shape(self):
        # log p + n rate + log(sqrt n) settles to a constant
        spec = Beta(3, 1)
        rho = 1.5
        rate = legendre(spec, rho)
        stats = []
        for n in (10, 20, 30, 40):
            est = tilted_product_tail(spec, n, math.exp(n * rho), 300_000,
                                      RngStream(65, n))
            stats.append(math.log(est.value) + n * rate + 0.5 * math.log(n))
        assert max(stats) - min(stats) < 0.5


class TestWindowNegligibility:
    def test_window_tails_small_at_moderate_threshold(self):
        rep = window_negligibility(Beta(3, 1), math.e ** 12, 0.1, 300_000,
                                   RngStream(66, 0))
        assert rep.window.n1 == 4 and rep.window.n2 == 12
        for name in ("perpetuity_head", "perpetuity_tail", "line_head"):
            assert rep.row(name).below_threshold, name
        # the branching late part decays too slowly to clear the band at
        # desk scale; it is reported, not asserted small
        assert rep.row("line_tail").estimate < 1.0
        # the in-window slice carries the bulk of the full tail
        full = rep.row("perpetuity_full")
        window = rep.row("perpetuity_window")
        assert window.estimate <= full.estimate + 2 * (window.se + full.se)
        assert abs(full.estimate - window.estimate) < 0.25 * full.estimate + \
            2 * (full.se + window.se)

    def test_report_csv_schema(self, tmp_path):
        rep = window_negligibility(Beta(3, 1), math.e ** 9, 0.1, 20_000,
                                   RngStream(67, 0))
        out = tmp_path / "tails.csv"
        rep.write_csv(out)
        header = out.read_text().splitlines()[0]
        assert header == "quantity,x,n_window,estimate,se,replicas"
