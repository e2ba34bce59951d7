import math

import numpy as np
import pytest

from mlsi_bbe.bochner import certified_kappa
from mlsi_bbe.chain import build_chain
from mlsi_bbe.estimation import gap_eigenfunction, spectral_gap
from mlsi_bbe.evolution import (PositivityError, convexity_check, counterexample_42,
                                detect_nonconvexity, entropy_decay_check, evolve, evolve_expm,
                                fit_decay_rate, monotonicity_check, one_particle_chain,
                                relative_entropy_trajectory, site_sums)
from mlsi_bbe.functionals import entropy
from mlsi_bbe.models import preset_homogeneous_bl, preset_poisson, preset_two_point


@pytest.fixture(scope="module")
def poisson():
    return build_chain(preset_poisson(1.0, 30))


def _random_f0(chain, seed, scale=1.0):
    return np.exp(scale * np.random.default_rng(seed).normal(size=chain.size))


def test_constant_start_stays_constant(poisson):
    traj = evolve(poisson.gen, poisson.pi, np.full(poisson.size, 2.5), np.linspace(0, 3, 7))
    np.testing.assert_allclose(traj.f, 2.5, rtol=1e-13)
    assert np.all(np.abs(traj.ent) < 1e-14)
    assert detect_nonconvexity(traj) is None


def test_relaxes_to_mean_and_conserves_mass(poisson):
    gap = spectral_gap(poisson.gen, poisson.pi)
    f0 = _random_f0(poisson, 1)
    traj = evolve(poisson.gen, poisson.pi, f0, np.linspace(0, 40 / gap, 41))
    assert traj.ent[-1] < 1e-9
    mean = float(np.dot(poisson.pi.weights, f0))
    np.testing.assert_allclose(traj.f[-1], mean, rtol=1e-6)
    assert traj.diagnostics["mass_drift"] < 1e-11
    assert traj.diagnostics["min_value"] > 0


def test_times_validated(poisson):
    with pytest.raises(ValueError):
        evolve(poisson.gen, poisson.pi, np.ones(poisson.size), [0.5, 1.0])
    with pytest.raises(ValueError):
        evolve(poisson.gen, poisson.pi, np.ones(poisson.size), [0.0, 1.0, 1.0])


def test_rejects_nonpositive_start(poisson):
    f0 = np.ones(poisson.size)
    f0[3] = 0.0
    with pytest.raises((ValueError, PositivityError)):
        evolve(poisson.gen, poisson.pi, f0, [0.0, 1.0])


def test_expm_agrees(poisson):
    f0 = _random_f0(poisson, 2)
    times = np.linspace(0, 4, 9)
    a = evolve(poisson.gen, poisson.pi, f0, times)
    b = evolve_expm(poisson.gen, poisson.pi, f0, times)
    np.testing.assert_allclose(a.f, b.f, rtol=1e-8)
    np.testing.assert_allclose(a.ent, b.ent, rtol=1e-7, atol=1e-14)


def test_derivative_orientation_and_refinement(poisson):
    f0 = _random_f0(poisson, 3, 0.5)
    errs = []
    for dt in (0.02, 0.01):
        times = np.arange(0, 1 + dt / 2, dt)
        tr = evolve(poisson.gen, poisson.pi, f0, times)
        fd = (tr.ent[2:] - tr.ent[:-2]) / (2 * dt)
        # compare at t = 0.5
        i = int(round(0.5 / dt))
        errs.append(abs(fd[i - 1] - tr.dent[i]))
        assert np.all(tr.dent <= 0)
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


def test_entropy_invariants_along_trajectory(poisson):
    tr = evolve(poisson.gen, poisson.pi, _random_f0(poisson, 4), np.linspace(0, 5, 51))
    assert monotonicity_check(tr).ok
    assert np.all(tr.ent >= 0)
    assert convexity_check(tr).ok


@pytest.mark.parametrize("seed", range(3))
def test_poisson_decay_at_certified_kappa(poisson, seed):
    kappa = certified_kappa(poisson.spec).kappa
    assert kappa == pytest.approx(1.0)
    tr = evolve(poisson.gen, poisson.pi, _random_f0(poisson, seed), np.linspace(0, 6, 61))
    assert entropy_decay_check(tr, kappa, "mlsi").ok
    assert entropy_decay_check(tr, kappa, "kappa").ok


def test_bl_decay():
    chain = build_chain(preset_homogeneous_bl(5, 2))
    cert = certified_kappa(chain.spec)
    assert cert.kappa == pytest.approx(1.0)
    tr = evolve(chain.gen, chain.pi, _random_f0(chain, 7), np.linspace(0, 6, 61))
    assert entropy_decay_check(tr, cert.kappa, "mlsi").ok
    assert entropy_decay_check(tr, cert.kappa, "kappa").ok
    assert detect_nonconvexity(tr) is None


def test_decay_negative_control(poisson):
    gap = spectral_gap(poisson.gen, poisson.pi)
    phi = gap_eigenfunction(poisson.gen, poisson.pi)
    f0 = 1 + 0.1 * phi / np.abs(phi).max()
    tr = evolve(poisson.gen, poisson.pi, f0, np.linspace(0, 3, 31))
    rep = entropy_decay_check(tr, 2.5 * gap, "mlsi")
    assert not rep.ok
    assert rep.details["first_failure_time"] > 0


def test_decay_check_rejects_nonpositive_constant(poisson):
    tr = evolve(poisson.gen, poisson.pi, np.ones(poisson.size), [0.0, 1.0])
    with pytest.raises(ValueError):
        entropy_decay_check(tr, 0.0)
    with pytest.raises(ValueError):
        entropy_decay_check(tr, 1.0, "lsi")


def test_fit_rate_along_gap_eigenvector():
    chain = build_chain(preset_poisson(1.0, 25))
    gap = spectral_gap(chain.gen, chain.pi)
    phi = gap_eigenfunction(chain.gen, chain.pi)
    f0 = 1 + 1e-3 * phi / np.abs(phi).max()
    tr = evolve(chain.gen, chain.pi, f0, np.linspace(0, 6 / gap, 61))
    assert fit_decay_rate(tr) == pytest.approx(2 * gap, rel=0.02)


def test_fit_rate_generic_at_least_certificate(poisson):
    tr = evolve(poisson.gen, poisson.pi, _random_f0(poisson, 9), np.linspace(0, 8, 81))
    assert fit_decay_rate(tr) >= 1.0 - 1e-6


def test_fit_rate_constant_errors(poisson):
    tr = evolve(poisson.gen, poisson.pi, np.ones(poisson.size), np.linspace(0, 1, 5))
    with pytest.raises(ValueError, match="window too short"):
        fit_decay_rate(tr)


def test_relative_entropy_trajectory():
    chain = build_chain(preset_two_point())
    mu = np.array([0.9, 0.1])
    tr = relative_entropy_trajectory(chain.gen, chain.pi, mu, [0.0, 0.5])
    h0 = float(np.sum(mu * np.log(mu / chain.pi.weights)))
    assert tr.ent[0] == pytest.approx(h0, rel=1e-12)
    # the two-point law relaxes at rate 2
    p = 0.5 + 0.4 * math.exp(-2 * 0.5)
    h = p * math.log(2 * p) + (1 - p) * math.log(2 * (1 - p))
    assert tr.ent[1] == pytest.approx(h, rel=1e-8)


def test_counterexample_values():
    ce = counterexample_42(100.0, 0.01)
    assert ce.Q[0] == pytest.approx(-0.03902, abs=5e-6)
    assert abs(ce.Q[0] - ce.closed_form_Q1) <= 1e-14
    assert ce.rel_diff <= 1e-12
    assert ce.critical_c1 > 100


def test_counterexample_large_c1_negative_and_detected():
    ce = counterexample_42(1e5, 0.01)
    assert ce.total < 0
    chain, f = one_particle_chain(ce.c, ce.f)
    tr = evolve(chain.gen, chain.pi, f, [0.0, 1e-3])
    assert detect_nonconvexity(tr) == 0.0


def test_site_sums_symmetric_case():
    # eps = 1 sits outside the open interval, so evaluate the sums directly
    Q = site_sums(np.array([1.0, 2.0, 1.0]))
    assert Q[0] == pytest.approx(math.log(2) + 1, rel=1e-14)


def test_counterexample_argument_checks():
    with pytest.raises(ValueError):
        counterexample_42(1.0, 0.1)
    with pytest.raises(ValueError):
        counterexample_42(10.0, 1.0)


def test_counterexample_entropy_cross_check():
    chain, f = one_particle_chain(np.array([3.0, 1.0, 1.0]), np.array([1.0, 2.0, 0.5]))
    w = 1 / np.array([3.0, 1.0, 1.0])
    w /= w.sum()
    mean = np.dot(w, [1.0, 2.0, 0.5])
    direct = float(np.dot(w, np.array([1.0, 2.0, 0.5]) * np.log(np.array([1.0, 2.0, 0.5]) / mean)))
    assert entropy(chain.pi, f) == pytest.approx(direct, rel=1e-12)
