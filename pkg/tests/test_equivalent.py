import numpy as np
import pytest

from prosumer_gne import CommGraph, ScenarioInstance, StrategyProfile, vi_residual
from prosumer_gne import equivalent as eq
from prosumer_gne.errors import InfeasibleError, NoBracketError
from prosumer_gne.market import market_clearing_gap
from prosumer_gne.scenarios import random_instance


def test_build_two_prosumer(two_prosumer):
    pb = eq.build(two_prosumer)
    assert pb.k.tolist() == [1.0, 1.0]
    for p in (-3.0, 0.0, 2.5, 7.0):
        assert pb.tilde_h(0, p) == pytest.approx(p * p - 10 * p, abs=1e-12)


def test_build_three_prosumer_k(three_stage1):
    pb = eq.build(three_stage1)
    assert pb.k.tolist() == [2000.0] * 3
    assert pb.total_demand == 1095


def test_curvature_positive(rng):
    for _ in range(20):
        pb = eq.build(random_instance(int(rng.integers(2, 20)), rng))
        assert np.all(pb.curvature > 0)
        assert np.all(pb.k > 0)


def test_elasticities_recovered_from_k(rng):
    sc = random_instance(7, rng)
    assert np.allclose(eq.build(sc).elasticities, sc.a, rtol=1e-12)


def test_tilde_h_grad_examples():
    pb = eq.EquivalentProblem(c=[1.0], d=[0.0], k=[1.0], D=[10.0], p_min=[0.0], p_max=[100.0])
    assert pb.tilde_h_grad(0, 5.0) == 0.0
    pb = eq.EquivalentProblem(c=[0.00075], d=[0.0], k=[2000.0], D=[730.0], p_min=[0.0], p_max=[1000.0])
    assert pb.tilde_h_grad(0, 505.4) == pytest.approx(0.00125 * 505.4 - 0.365, abs=1e-12)
    assert pb.tilde_h_grad(0, 505.4) == pytest.approx(0.26675, abs=1e-5)


def test_tilde_h_grad_finite_differences(rng):
    h = 1e-6
    for _ in range(5):
        pb = eq.build(random_instance(8, rng))
        for p in rng.uniform(pb.p_min, pb.p_max, (20, pb.n)):
            for i in range(pb.n):
                fd = (pb.tilde_h(i, p[i] + h) - pb.tilde_h(i, p[i] - h)) / (2 * h)
                g = pb.tilde_h_grad(i, p[i])
                assert abs(fd - g) <= 1e-7 * max(1.0, abs(g))


def test_oracle_two_prosumer(two_prosumer):
    rep = eq.solve_scenario(two_prosumer)
    assert rep.point.p == pytest.approx([7.5, 2.5], abs=1e-9)
    assert rep.point.mu_c == pytest.approx(5.0, abs=1e-9)
    assert rep.b_star == pytest.approx([7.5, 2.5], abs=1e-9)
    assert rep.kkt_residual <= 1e-10


def test_oracle_stage1_matches_reported(three_stage1):
    rep = eq.solve_scenario(three_stage1)
    assert np.all(np.abs(rep.point.p - [505.4, 408.4, 177.8]) <= 0.02 * np.array([505.4, 408.4, 177.8]))
    assert rep.point.mu_c == pytest.approx(0.2685, abs=0.002)
    assert abs(rep.point.p.sum() - 1095) <= 1e-8


def test_oracle_stage2_matches_reported():
    sc = ScenarioInstance.from_arrays(
        [-1000] * 3, [0.00075, 0.0006, 0.001], 0, [730, 0, 0], 0, 1000, CommGraph.ring(3)
    )
    p = eq.solve_scenario(sc).point.p
    ref = np.array([440.6, 168.9, 123.9])
    assert np.all(np.abs(p - ref) <= 0.02 * ref)


def test_oracle_infeasible():
    pb = eq.EquivalentProblem(c=[1, 1], d=[0, 0], k=[1, 1], D=[10, 10], p_min=[0, 0], p_max=[1, 1])
    with pytest.raises(InfeasibleError):
        eq.oracle_solve(pb)


def test_oracle_default_bracket_on_degenerate_box():
    # both boxes collapse to a point; any price clears the market
    pb = eq.EquivalentProblem(c=[1, 1], d=[0, 0], k=[1, 1], D=[1, 1], p_min=[1, 1], p_max=[1, 1])
    rep = eq.oracle_solve(pb)
    assert rep.point.p.tolist() == [1.0, 1.0]


def test_oracle_custom_bracket_is_expanded(two_prosumer):
    pb = eq.build(two_prosumer)
    rep = eq.oracle_solve(pb, bracket=(100.0, 200.0))
    assert rep.point.mu_c == pytest.approx(5.0, abs=1e-9)


def test_no_bracket_error(monkeypatch, two_prosumer):
    monkeypatch.setattr(eq, "MAX_DOUBLINGS", 3)
    with pytest.raises(NoBracketError):
        eq.oracle_solve(eq.build(two_prosumer), bracket=(1e6, 1e6 + 1))


def test_dual_response_monotone(rng):
    pb = eq.build(random_instance(12, rng))
    for _ in range(100):
        m1, m2 = np.sort(rng.normal(0, 20, 2))
        assert np.all(eq.dual_response(pb, m1) <= eq.dual_response(pb, m2))


def test_uniqueness_across_brackets(rng):
    for _ in range(10):
        sc = random_instance(int(rng.integers(2, 30)), rng)
        assert sc.is_strictly_feasible()
        pb = eq.build(sc)
        r1 = eq.oracle_solve(pb)
        r2 = eq.oracle_solve(pb, bracket=(-1e4, 1e4 + 17.0))
        assert np.abs(r1.point.p - r2.point.p).max() <= 1e-8


def test_lambda_identity(rng):
    sc = random_instance(10, rng)
    pb = eq.build(sc)
    pt = eq.oracle_solve(pb).point
    assert np.allclose(pt.lam, -pt.mu_c + pt.p / pb.k - pb.D / pb.k, atol=1e-10, rtol=0)


def test_recover_b_examples(two_prosumer):
    assert np.all(eq.recover_b(two_prosumer.D, 0.0, two_prosumer) == 0)
    assert eq.recover_b([7.5, 2.5], 5.0, two_prosumer).tolist() == [7.5, 2.5]


def test_oracle_is_a_gne(rng):
    for _ in range(50):
        sc = random_instance(int(rng.integers(2, 51)), rng)
        rep = eq.solve_scenario(sc)
        prof = StrategyProfile(rep.point.p, rep.b_star)
        assert vi_residual(prof, sc) <= 1e-6
        assert market_clearing_gap(prof, sc) <= 1e-8 * max(1, np.abs(rep.b_star).sum())


def test_kkt_residual_examples(two_prosumer):
    pb = eq.build(two_prosumer)
    pt = eq.oracle_solve(pb, tol=1e-10).point
    assert eq.kkt_residual(pt, pb) <= 1e-10
    p = pt.p.copy()
    p[0] += 1.0
    assert eq.kkt_residual_at(p, pt.mu_c, pb) >= pb.curvature[0] * 1.0 - 1e-12
    # at the lower bound with a positive gradient gap the normal cone absorbs it
    low = eq.EquivalentProblem(c=[1, 1], d=[5, 0], k=[1, 1], D=[0, 1], p_min=[0, 0], p_max=[10, 10])
    viol = eq.stationarity_violation([0.0, 1.0], 1.0, low)
    assert viol[0] == 0.0


def test_stationarity_at_upper_bound():
    pb = eq.EquivalentProblem(c=[1.0], d=[0.0], k=[1.0], D=[0.0], p_min=[0.0], p_max=[1.0])
    # grad at 1 is 2; price 3 pushes against the bound, which is fine
    assert eq.stationarity_violation([1.0], 3.0, pb)[0] == 0.0
    assert eq.stationarity_violation([1.0], 1.0, pb)[0] == pytest.approx(1.0)
