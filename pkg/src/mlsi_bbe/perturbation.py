"""Smoothing of non-monotone death rates and transfer of constants between
equivalent measures.

The chains here are birth-death chains with unit birth rate, so
pi(n) is proportional to 1 / (b(1) ... b(n)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .bochner import check_assumption_A
from .chain import Measure, build_chain, enumerate_states, stationary_measure
from .functionals import _positive, _w, entropy
from .models import ModelSpec, birth_death
from .report import Report


@dataclass
class SmoothedRates:
    b: np.ndarray
    b_tilde: np.ndarray
    n0: int
    delta1: float
    flagged: np.ndarray  # indices where the window was shrunk
    ratio_bounds: tuple[float, float] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.b_tilde)

    def spec(self) -> ModelSpec:
        return unit_birth_chain(self.b_tilde, preset="smoothed", params={"n0": self.n0})

    def as_dict(self) -> dict[str, Any]:
        out = {"n0": self.n0, "delta1": self.delta1, "b_tilde": self.b_tilde.tolist(),
               "flagged": self.flagged.tolist()}
        if self.ratio_bounds is not None:
            out["ratio_bounds"] = list(self.ratio_bounds)
        out.update(self.extra)
        return out


def unit_birth_chain(b, **meta) -> ModelSpec:
    """Birth-death chain on 0..K with a = 1 (0 at the top) and death rates b."""
    b = np.asarray(b, dtype=float)
    a = np.ones(len(b))
    a[-1] = 0.0
    return birth_death(a, b, **meta)


def _smoothed_value(b: np.ndarray, k: int, w: int) -> float:
    j = np.arange(1, w)
    return float(b[k] + np.sum((w - j) / w * (b[k + j] + b[k - j] - 2 * b[k])) / w)


def smooth_rates(b, n0: int) -> SmoothedRates:
    """Window-averaged rates; linear ramp below n0.

    For k >= n0 the value is b(k) + (1/n0) sum_{j<n0} ((n0-j)/n0)(b(k+j) + b(k-j) - 2b(k)).
    When k + n0 - 1 runs past the array the window shrinks to K - k + 1 and k is flagged.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 1:
        raise ValueError("rates must be one-dimensional")
    n0 = int(n0)
    if n0 < 2:
        raise ValueError("n0 must be >= 2")
    K = len(b) - 1
    if K <= 2 * n0:
        raise ValueError(f"window exceeds array: need more than {2 * n0} + 1 entries, got {K + 1}")
    if b[0] != 0:
        raise ValueError("b(0) must be 0")
    bt = np.empty_like(b)
    flagged = []
    for k in range(n0, K + 1):
        w = min(n0, K - k + 1)
        if w < n0:
            flagged.append(k)
        bt[k] = _smoothed_value(b, k, w)
    bt[:n0] = bt[n0] * np.arange(n0) / n0
    inc = np.diff(bt)
    return SmoothedRates(b, bt, n0, float(inc.min()), np.array(flagged, dtype=int))


def increment_identity(b, n0: int, backward: bool = False):
    """Forward increments of b_tilde against (1/n0^2) sum_{j=1}^{n0} [b(k+j) - b(k+j-n0)].

    With ``backward`` the left side is b_tilde(k) - b_tilde(k-1) and the sum runs over
    j = 0..n0-1, which is the same identity shifted by one.  Returns (k, lhs, rhs) on the
    interior where both values use the full window.
    """
    b = np.asarray(b, dtype=float)
    s = smooth_rates(b, n0)
    K = len(b) - 1
    if backward:
        ks = np.arange(n0 + 1, K - n0 + 2)
        lhs = s.b_tilde[ks] - s.b_tilde[ks - 1]
        j = np.arange(n0)
    else:
        ks = np.arange(n0, K - n0 + 1)
        lhs = s.b_tilde[ks + 1] - s.b_tilde[ks]
        j = np.arange(1, n0 + 1)
    rhs = (b[ks[:, None] + j] - b[ks[:, None] + j - n0]).sum(axis=1) / n0**2
    return ks, lhs, rhs


def summation_by_parts(psi, phi, lo: int, hi: int) -> tuple[float, float]:
    """Both sides of sum_{j=lo}^{hi} psi(j) grad phi(j)
    = psi(hi) phi(hi+1) - psi(lo) phi(lo) - sum_{j=lo+1}^{hi} phi(j) grad psi(j-1)."""
    psi, phi = np.asarray(psi, dtype=float), np.asarray(phi, dtype=float)
    if not lo < hi or hi + 1 >= len(phi) or hi >= len(psi):
        raise ValueError("index range out of bounds")
    j = np.arange(lo, hi + 1)
    lhs = float(np.sum(psi[j] * (phi[j + 1] - phi[j])))
    jj = np.arange(lo + 1, hi + 1)
    rhs = float(psi[hi] * phi[hi + 1] - psi[lo] * phi[lo] - np.sum(phi[jj] * (psi[jj] - psi[jj - 1])))
    return lhs, rhs


def verify_hypotheses(b, C1: float, delta: float, n0: int) -> Report:
    """sup |b(n+1) - b(n)| <= C1 and inf [b(n+n0) - b(n)] >= delta on the array."""
    b = np.asarray(b, dtype=float)
    if len(b) <= n0:
        raise ValueError("array shorter than the window")
    lip = float(np.max(np.abs(np.diff(b))))
    gain = float(np.min(b[n0:] - b[:-n0]))
    ok = lip <= C1 and gain >= delta
    violation = max(lip - C1, delta - gain, 0.0)
    return Report("large_scale_monotone", ok, violation,
                  details={"sup_increment": lip, "inf_gain": gain, "C1": C1, "delta": delta, "n0": n0})


def measure_ratio_bounds(spec_b: ModelSpec, spec_btilde: ModelSpec) -> tuple[float, float]:
    """(min, max) of pi / pi_tilde over the common range, from log weights."""
    if spec_b.family != "birth_death" or spec_btilde.family != "birth_death":
        raise ValueError("ratio bounds compare birth-death chains")
    if spec_b.N != spec_btilde.N or spec_b.offset != spec_btilde.offset:
        raise ValueError("chains must share the truncation")
    lp = stationary_measure(spec_b, enumerate_states(spec_b)).log_weights
    lq = stationary_measure(spec_btilde, enumerate_states(spec_btilde)).log_weights
    d = lp - lq
    return float(np.exp(d.min())), float(np.exp(d.max()))


def transfer_constant(alpha_tilde: float, low: float, high: float) -> float:
    """alpha >= (m / M) alpha_tilde with m = min pi/pi_tilde, M = max pi/pi_tilde."""
    if not 0 < low <= high:
        raise ValueError("need 0 < low <= high")
    return float(alpha_tilde * low / high)


def variational_entropy(pi, f, t: float) -> float:
    """pi[f log f - f log t - f + t]; its infimum over t > 0 is Ent_pi(f), attained at t = pi[f]."""
    w = _w(pi)
    f = _positive(f, len(w))
    if t <= 0:
        raise ValueError("t must be positive")
    return float(np.dot(w, f * np.log(f) - f * np.log(t) - f + t))


def entropy_comparison(pi, pi_tilde, f) -> tuple[float, float]:
    """(Ent_pi(f), M Ent_pi_tilde(f)); the first never exceeds the second."""
    w, wt = _w(pi), _w(pi_tilde)
    if isinstance(pi, Measure) and isinstance(pi_tilde, Measure):
        M = float(np.exp(np.max(pi.log_weights - pi_tilde.log_weights)))
    else:
        M = float(np.max(w / wt))
    return entropy(w, f), M * entropy(wt, f)


@dataclass
class PerturbationResult:
    smoothed: SmoothedRates
    kappa_tilde: float
    low: float
    high: float
    alpha: float
    hypotheses: Report

    def as_dict(self) -> dict[str, Any]:
        return {"smoothed": self.smoothed.as_dict(), "kappa_tilde": self.kappa_tilde,
                "ratio_low": self.low, "ratio_high": self.high, "alpha_transferred": self.alpha,
                "hypotheses": self.hypotheses.as_dict()}


def perturbation_pipeline(spec: ModelSpec, n0: int, C1: float = np.inf, delta: float = 0.0) -> PerturbationResult:
    """Smooth, certify the smoothed chain and transfer its constant back to ``spec``."""
    if spec.family != "birth_death" or spec.offset != 0:
        raise ValueError("pipeline expects a birth-death chain on 0..K")
    if not np.all(spec.a[:-1] == 1.0):
        raise ValueError("pipeline expects unit birth rates")
    s = smooth_rates(spec.b, n0)
    tilde = s.spec()
    cert = check_assumption_A(tilde)
    if not cert.certified:
        raise ValueError("smoothed rates are not uniformly increasing")
    low, high = measure_ratio_bounds(spec, tilde)
    s.ratio_bounds = (low, high)
    alpha = transfer_constant(cert.kappa, low, high)
    return PerturbationResult(s, cert.kappa, low, high, alpha, verify_hypotheses(spec.b, C1, delta, n0))


def transfer_chain(spec: ModelSpec, n0: int):
    """Original chain and smoothed chain, built together."""
    s = smooth_rates(spec.b, n0)
    return build_chain(spec), build_chain(s.spec())
