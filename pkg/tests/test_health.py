from fractions import Fraction

import numpy as np
import pytest

from bess_om.health import (
    CapacityPair,
    SteadySegment,
    ah_integrate,
    detect_steady_segments,
    estimate_capacity,
    golden_section_minimize,
    lof_scores,
    rawtls_cost,
)
from oracles import brute_force_lof, grid_search_capacity


def noiseless_pairs(q_true=300.0, count=10):
    xs = np.linspace(0.2, 0.8, count)
    return [CapacityPair(x=float(x), y=float(q_true * x), sigma_x=0.01, sigma_y=1.0)
            for x in xs]


class TestLofScores:
    def test_spike_attains_max(self):
        values = np.full(101, 300.0)
        values[50] = 600.0
        values[:50] += np.linspace(-1, 1, 50) * 0.5   # break exact ties
        values[51:] += np.linspace(-1, 1, 50) * 0.5
        scores = lof_scores(values, k=20)
        assert int(np.argmax(scores)) == 50
        assert scores[50] > scores[np.arange(101) != 50].max()

    def test_identical_values_score_one(self):
        scores = lof_scores(np.full(50, 300.0), k=5)
        assert (scores == 1.0).all()

    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        values = rng.normal(300.0, 5.0, size=120)
        values[17] = 420.0
        got = lof_scores(values, k=10)
        expected = brute_force_lof(values, k=10)
        assert np.allclose(got, expected, rtol=1e-9, atol=1e-9)

    def test_two_clusters_intra_scores_near_one(self):
        rng = np.random.default_rng(28)
        values = np.concatenate([
            300.0 + rng.uniform(-1, 1, 50),
            0.0 + rng.uniform(-1, 1, 50),
        ])
        scores = lof_scores(values, k=10)
        assert np.abs(scores - 1.0).max() < 0.2
        assert np.allclose(scores, brute_force_lof(values, k=10),
                           rtol=1e-9, atol=1e-9)

    def test_chunking_consistent(self):
        # force multiple chunks through the chunked code path
        rng = np.random.default_rng(31)
        values = rng.normal(0, 1, size=1300)
        got = lof_scores(values, k=7)
        expected = brute_force_lof(values[:130], k=7)
        assert np.allclose(lof_scores(values[:130], k=7), expected)
        assert got.shape == (1300,)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            lof_scores(np.arange(5.0), k=5)


class TestDetectSteadySegments:
    def test_constant_current_single_segment(self):
        t = 10.0 * np.arange(200)
        segs = detect_steady_segments(np.full(200, 300.0), t, k=20,
                                      lof_threshold=1.5, min_len_s=600.0)
        assert len(segs) == 1
        assert segs[0].k1 == 0 and segs[0].k2 == 199

    def test_spike_burst_splits(self):
        rng = np.random.default_rng(3)
        t = 10.0 * np.arange(300)
        current = 300.0 + rng.normal(0, 0.5, 300)
        current[145:155] = 900.0
        segs = detect_steady_segments(current, t, k=20, lof_threshold=1.5,
                                      min_len_s=600.0)
        assert len(segs) == 2
        assert segs[0].k2 < 145 and segs[1].k1 >= 155

    def test_pure_noise_no_segments(self):
        rng = np.random.default_rng(4)
        t = 400.0 * np.arange(30)   # samples far apart; runs stay short
        current = rng.choice([0.0, 500.0, -500.0, 900.0], size=30)
        segs = detect_steady_segments(current, t, k=5, lof_threshold=1.01,
                                      min_len_s=1e7)
        assert segs == []


class TestAhIntegrate:
    def test_hand_value(self):
        # -300 A for 1800 s at 1 Hz, eta 1, SOC 0.2 -> 0.7
        n = 1801
        current = np.full(n, -300.0)
        soc = np.linspace(0.2, 0.7, n)
        seg = SteadySegment(k1=0, k2=1800, mean_current=-300.0)
        pair = ah_integrate(seg, current, soc, dt_s=1.0, eta=1.0)
        assert pair.y == pytest.approx(150.0)
        assert pair.x == pytest.approx(0.5)

    def test_eta_scales_linearly(self):
        n = 1801
        current = np.full(n, -300.0)
        soc = np.linspace(0.2, 0.7, n)
        seg = SteadySegment(k1=0, k2=1800, mean_current=-300.0)
        base = ah_integrate(seg, current, soc, dt_s=1.0, eta=1.0)
        scaled = ah_integrate(seg, current, soc, dt_s=1.0, eta=0.99)
        assert scaled.y == pytest.approx(0.99 * base.y)

    def test_zero_soc_change_rejected(self):
        current = np.full(10, -300.0)
        soc = np.full(10, 0.5)
        seg = SteadySegment(k1=0, k2=9, mean_current=-300.0)
        with pytest.raises(ValueError, match="zero SOC change"):
            ah_integrate(seg, current, soc, dt_s=1.0)

    def test_concatenation_additivity(self):
        rng = np.random.default_rng(8)
        current = -200.0 + rng.normal(0, 10, 500)
        soc = np.linspace(0.1, 0.6, 500)
        whole = ah_integrate(SteadySegment(0, 400, -200.0), current, soc, dt_s=2.0)
        left = ah_integrate(SteadySegment(0, 150, -200.0), current, soc, dt_s=2.0)
        right = ah_integrate(SteadySegment(150, 400, -200.0), current, soc, dt_s=2.0)
        assert whole.y == pytest.approx(left.y + right.y, rel=1e-12)
        assert whole.x == pytest.approx(left.x + right.x, rel=1e-12)


class TestRawtlsCost:
    def test_exact_fit_zero_cost(self):
        assert rawtls_cost(300.0, noiseless_pairs()) == 0.0

    def test_single_pair_fraction_oracle(self):
        pair = CapacityPair(x=0.5, y=150.0, sigma_x=0.01, sigma_y=1.0)
        q = Fraction(310)
        r = Fraction(150) - q * Fraction(1, 2)
        expected = (r * r) / (1 + q * q) ** 2 * (q * q / Fraction(1, 10000) + 1)
        got = rawtls_cost(310.0, [pair])
        assert got == pytest.approx(float(expected), rel=1e-12)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(5)
        pairs = [CapacityPair(x=float(rng.uniform(0.1, 0.9)),
                              y=float(rng.uniform(30, 280)),
                              sigma_x=0.01, sigma_y=1.0) for _ in range(8)]
        for q in np.linspace(90.0, 360.0, 50):
            assert rawtls_cost(float(q), pairs) >= 0.0

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            rawtls_cost(300.0, [])


class TestEstimateCapacity:
    def test_noiseless_recovery(self):
        result = estimate_capacity(noiseless_pairs(), q_nom=300.0)
        assert result.q_hat == pytest.approx(300.0, abs=1e-3)
        assert result.soh == pytest.approx(1.0, abs=1e-5)
        assert result.pairs_used == 10
        assert not result.at_boundary

    def test_noisy_matches_grid_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(5):
            q_true = rng.uniform(250.0, 310.0)
            pairs = []
            for _ in range(20):
                x = float(rng.uniform(0.2, 0.8))
                y = q_true * x * (1.0 + rng.normal(0, 0.01))
                pairs.append(CapacityPair(x=x, y=float(y), sigma_x=0.01,
                                          sigma_y=0.005 * abs(y) + 0.1))
            result = estimate_capacity(pairs, q_nom=300.0)
            oracle = grid_search_capacity(pairs, 0.3 * 300.0, 1.2 * 300.0)
            assert abs(result.q_hat - q_true) / q_true < 0.02
            assert abs(result.q_hat - oracle) < 1e-3

    def test_sigma_rescaling_keeps_argmin(self):
        rng = np.random.default_rng(9)
        pairs = []
        for _ in range(15):
            x = float(rng.uniform(0.2, 0.8))
            y = 290.0 * x * (1.0 + rng.normal(0, 0.01))
            pairs.append(CapacityPair(x=x, y=float(y), sigma_x=0.01, sigma_y=1.0))
        scaled = [CapacityPair(x=p.x, y=p.y, sigma_x=3.0 * p.sigma_x,
                               sigma_y=3.0 * p.sigma_y) for p in pairs]
        a = estimate_capacity(pairs, q_nom=300.0)
        b = estimate_capacity(scaled, q_nom=300.0)
        assert abs(a.q_hat - b.q_hat) < 1e-3

    def test_boundary_minimum_flagged(self):
        # truth 400 Ah sits below the [600, 2400] bracket
        pairs = [CapacityPair(x=0.5, y=200.0, sigma_x=0.01, sigma_y=1.0)]
        result = estimate_capacity(pairs, q_nom=2000.0)
        assert result.at_boundary
        assert result.q_hat > 0

    def test_golden_section_quadratic(self):
        x = golden_section_minimize(lambda v: (v - 2.5) ** 2, 0.0, 10.0, tol=1e-6)
        assert x == pytest.approx(2.5, abs=1e-5)
