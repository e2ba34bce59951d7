import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlsi_bbe.chain import build_chain
from mlsi_bbe.evolution import convexity_check, entropy_decay_check, evolve
from mlsi_bbe.functionals import entropy
from mlsi_bbe.models import preset_perturbed_linear, preset_segment
from mlsi_bbe.perturbation import (entropy_comparison, increment_identity, measure_ratio_bounds,
                                   perturbation_pipeline, smooth_rates, summation_by_parts,
                                   transfer_constant, unit_birth_chain, variational_entropy,
                                   verify_hypotheses)


def wavy(K, amp=0.4):
    n = np.arange(K + 1, dtype=float)
    return n + amp * np.sin(n)


def test_linear_rates_unchanged():
    b = np.arange(41, dtype=float)
    s = smooth_rates(b, 5)
    np.testing.assert_allclose(s.b_tilde, b, atol=1e-12)
    assert s.delta1 == pytest.approx(1.0)


def test_ramp_below_window():
    s = smooth_rates(wavy(60), 6)
    np.testing.assert_allclose(s.b_tilde[:6], s.b_tilde[6] * np.arange(6) / 6, rtol=1e-14)


def test_window_definition_spot_check():
    b = wavy(50)
    s = smooth_rates(b, 4)
    k = 20
    manual = b[k] + sum((4 - j) / 4 * (b[k + j] + b[k - j] - 2 * b[k]) for j in range(1, 4)) / 4
    assert s.b_tilde[k] == pytest.approx(manual, rel=1e-15)


def test_tail_flagged():
    s = smooth_rates(wavy(40), 7)
    np.testing.assert_array_equal(s.flagged, np.arange(35, 41))


@pytest.mark.parametrize("K,n0", [(10, 5), (20, 1), (4, 2)])
def test_window_errors(K, n0):
    with pytest.raises(ValueError):
        smooth_rates(wavy(K), n0)


def test_nonzero_origin_rejected():
    with pytest.raises(ValueError):
        smooth_rates(wavy(30) + 1, 3)


def test_wavy_rates_become_increasing():
    s = smooth_rates(wavy(200), 7)
    assert s.delta1 > 0
    assert np.all(s.increments >= s.delta1)


@pytest.mark.parametrize("backward", [False, True])
def test_increment_identity_exact(backward):
    rng = np.random.default_rng(0)
    b = np.concatenate([[0.0], np.cumsum(rng.uniform(-1, 2, size=80))])
    _, lhs, rhs = increment_identity(b, 6, backward=backward)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * np.abs(b).max())


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 40), st.integers(0, 2**31 - 1))
def test_summation_by_parts(n, seed):
    rng = np.random.default_rng(seed)
    psi, phi = rng.normal(size=n + 2), rng.normal(size=n + 2)
    lhs, rhs = summation_by_parts(psi, phi, 1, n)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(lhs)))


def test_summation_by_parts_bounds():
    with pytest.raises(ValueError):
        summation_by_parts(np.ones(5), np.ones(5), 2, 4)


def test_hypotheses_linear():
    rep = verify_hypotheses(np.arange(50.0), 1.0, 7.0, 7)
    assert rep.ok
    assert rep.details["sup_increment"] == pytest.approx(1.0)
    assert rep.details["inf_gain"] == pytest.approx(7.0)


def test_hypotheses_wavy():
    rep = verify_hypotheses(wavy(200), 1.4, 7 - 0.8, 7)
    assert rep.ok
    assert rep.details["sup_increment"] <= 1.4


def test_hypotheses_report_realized_values():
    rep = verify_hypotheses(wavy(200, 2.0), 1.0, 1.0, 2)
    assert not rep.ok
    assert rep.details["sup_increment"] > 1.0
    assert rep.max_violation > 0


def test_ratio_bounds_identity():
    spec = unit_birth_chain(wavy(60))
    assert measure_ratio_bounds(spec, spec) == (1.0, 1.0)


def test_ratio_bounds_ramp_only():
    b = np.arange(61, dtype=float)
    s = smooth_rates(b, 5)
    # b_tilde = b above the window, so the ratio is frozen at the below-window product
    low, high = measure_ratio_bounds(unit_birth_chain(b), s.spec())
    ramp = np.prod(s.b_tilde[1:5] / b[1:5])
    assert high / low == pytest.approx(max(ramp, 1 / ramp), rel=1e-12)


def test_ratio_bounds_stable_under_doubling():
    r = []
    for K in (200, 400):
        s = smooth_rates(wavy(K), 7)
        r.append(measure_ratio_bounds(unit_birth_chain(wavy(K)), s.spec()))
    assert r[1][0] == pytest.approx(r[0][0], rel=1e-2)
    assert r[1][1] == pytest.approx(r[0][1], rel=1e-2)


def test_transfer_constant():
    assert transfer_constant(0.7, 1.0, 1.0) == 0.7
    assert transfer_constant(1.0, 0.5, 2.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        transfer_constant(1.0, 2.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_variational_entropy(n, seed):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(n))
    f = np.exp(rng.normal(size=n))
    ent = entropy(pi, f)
    mean = float(pi @ f)
    assert variational_entropy(pi, f, mean) == pytest.approx(ent, abs=1e-12)
    for t in rng.uniform(0.05, 5, size=5):
        assert variational_entropy(pi, f, t) >= ent - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_entropy_comparison(n, seed):
    rng = np.random.default_rng(seed)
    pi, pt = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    f = np.exp(2 * rng.normal(size=n))
    a, b = entropy_comparison(pi, pt, f)
    assert a <= b * (1 + 1e-12) + 1e-15


def test_pipeline_and_decay_on_original_chain():
    spec = preset_perturbed_linear(0.4, 200)
    res = perturbation_pipeline(spec, 7, C1=1.4, delta=6.2)
    assert res.smoothed.delta1 > 0
    assert res.hypotheses.ok
    assert 0 < res.alpha < res.kappa_tilde
    chain = build_chain(spec)
    rng = np.random.default_rng(11)
    for _ in range(3):
        f0 = np.exp(rng.normal(size=chain.size))
        tr = evolve(chain.gen, chain.pi, f0, np.linspace(0, 6, 61))
        assert entropy_decay_check(tr, res.alpha, "mlsi").ok
        assert entropy_decay_check(tr, res.alpha, "kappa").ok
        assert convexity_check(tr).ok


def test_pipeline_rejects_rates_without_growth():
    with pytest.raises(ValueError):
        perturbation_pipeline(preset_segment("uniform", 20), 3)


def test_as_dict_roundtrip_keys():
    s = smooth_rates(wavy(40), 4)
    d = s.as_dict()
    assert set(d) >= {"n0", "delta1", "b_tilde", "flagged"}
    assert len(d["b_tilde"]) == 41
