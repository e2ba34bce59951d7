"""Semigroup evolution T_t f = exp(tL) f and entropy trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .chain import Generator, Measure, build_chain
from .functionals import _positive, _w, entropy, mlsi_form, second_derivative_form
from .models import preset_zero_range
from .report import Report

EXPM_LIMIT = 200


class PositivityError(RuntimeError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    f: np.ndarray  # (n_times, n_states)
    ent: np.ndarray
    dent: np.ndarray  # -E(T_t f, log T_t f)
    d2ent: np.ndarray
    diagnostics: dict[str, Any] = field(default_factory=dict)


def _record(gen: Generator, pi, times, fs, diagnostics) -> Trajectory:
    ent = np.array([entropy(pi, f) for f in fs])
    dent = np.array([-mlsi_form(gen, pi, f) for f in fs])
    d2 = np.array([second_derivative_form(gen, pi, f) for f in fs])
    return Trajectory(np.asarray(times, dtype=float), fs, ent, dent, d2, diagnostics)


def evolve(gen: Generator, pi, f0, times, rtol: float = 1e-10, method: str = "DOP853",
           retries: int = 4) -> Trajectory:
    """Integrate df/dt = Lf with an embedded Runge-Kutta pair and record entropy data.

    Steps are capped at 0.5 / max|L_ii|; when the solution dips below
    1e-13 * min(f0) the integration is repeated with half the cap.
    """
    f0 = _positive(f0, gen.size)
    times = np.asarray(times, dtype=float)
    if times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must start at 0 and increase")
    w = _w(pi)
    mass0 = float(np.dot(w, f0))
    floor = 1e-13 * float(f0.min())
    max_step = 0.5 / max(gen.max_rate, 1e-300)
    L = gen.matrix
    for _ in range(retries + 1):
        if len(times) == 1:
            fs = f0[None, :].copy()
            break
        sol = solve_ivp(lambda t, y: L @ y, (0.0, times[-1]), f0, method=method, t_eval=times,
                        rtol=rtol, atol=1e-14 * float(np.abs(f0).max()), max_step=max_step)
        if not sol.success:
            raise RuntimeError(f"integration failed: {sol.message}")
        fs = sol.y.T
        if fs.min() >= floor:
            break
        max_step /= 2
    else:
        raise PositivityError(f"solution fell below the floor {floor:.3e}")
    mass = fs @ w
    diagnostics = {"method": method, "rtol": rtol, "max_step": max_step,
                   "mass_drift": float(np.max(np.abs(mass - mass0)) / abs(mass0)),
                   "min_value": float(fs.min())}
    return _record(gen, pi, times, fs, diagnostics)


def evolve_expm(gen: Generator, pi, f0, times) -> Trajectory:
    """Exact semigroup via dense matrix exponentials (small spaces only)."""
    if gen.size > EXPM_LIMIT:
        raise ValueError(f"expm oracle limited to {EXPM_LIMIT} states")
    f0 = _positive(f0, gen.size)
    Ld = gen.matrix.toarray()
    fs = np.array([scipy.linalg.expm(t * Ld) @ f0 for t in times])
    return _record(gen, pi, times, fs, {"method": "expm"})


def relative_entropy_trajectory(gen: Generator, pi: Measure, mu, times) -> Trajectory:
    """Trajectory of h(mu T_t | pi), obtained as Ent_pi(T_t (d mu / d pi)) by self-adjointness."""
    density = np.asarray(mu.weights if isinstance(mu, Measure) else mu, dtype=float) / pi.weights
    return evolve(gen, pi, density, times)


def entropy_decay_check(traj: Trajectory, constant: float, kind: str = "mlsi",
                        rel_slack: float = 1e-8) -> Report:
    """Exponential decay of Ent (kind 'mlsi') or of E(f, log f) (kind 'kappa') at ``constant``."""
    if constant <= 0:
        raise ValueError("decay constant must be positive")
    if kind == "mlsi":
        series = traj.ent
    elif kind == "kappa":
        series = -traj.dent
    else:
        raise ValueError("kind must be 'mlsi' or 'kappa'")
    bound = np.exp(-constant * traj.times) * series[0] * (1 + rel_slack)
    bad = series > bound
    first = float(traj.times[np.argmax(bad)]) if bad.any() else None
    excess = np.where(bound > 0, series / np.where(bound > 0, bound, 1.0) - 1, 0.0)
    return Report(f"decay_{kind}", not bad.any(), float(max(excess.max(initial=0.0), 0.0)),
                  details={"constant": constant, "first_failure_time": first})


def detect_nonconvexity(traj: Trajectory, rel_tol: float = 1e-12) -> float | None:
    """First grid time where the entropy second derivative is negative, or None."""
    thresh = -rel_tol * abs(traj.dent[0])
    bad = np.nonzero(traj.d2ent < thresh)[0]
    return float(traj.times[bad[0]]) if len(bad) else None


def convexity_check(traj: Trajectory, rel_tol: float = 1e-10) -> Report:
    """d2ent >= -rel_tol * |dent| at every grid time."""
    margin = traj.d2ent + rel_tol * np.abs(traj.dent)
    bad = margin < 0
    return Report("convex_decay", not bad.any(), float(max(-margin.min(initial=0.0), 0.0)),
                  details={"first_failure_time": float(traj.times[np.argmax(bad)]) if bad.any() else None})


def monotonicity_check(traj: Trajectory, rel_tol: float = 1e-12) -> Report:
    rise = np.diff(traj.ent) - rel_tol * traj.ent[:-1]
    return Report("entropy_nonincreasing", not np.any(rise > 0), float(max(rise.max(initial=0.0), 0.0)))


def fit_decay_rate(traj: Trajectory, window: float = 1e-8) -> float:
    """Least-squares exponential rate of Ent over the window Ent > window * Ent(0)."""
    if not traj.ent[0] > 0:
        raise ValueError("window too short: initial entropy is zero")
    keep = traj.ent > window * traj.ent[0]
    if keep.sum() < 3:
        raise ValueError("window too short for a decay fit")
    slope, _ = np.polyfit(traj.times[keep], np.log(traj.ent[keep]), 1)
    return float(-slope)


# ---------------------------------------------------------------------------
# three-site zero-range example with non-convex entropy decay


@dataclass
class Counterexample:
    c: np.ndarray
    f: np.ndarray
    Q: np.ndarray
    total: float
    second_derivative: float
    closed_form_Q1: float
    critical_c1: float

    @property
    def rel_diff(self) -> float:
        return abs(self.total - self.second_derivative) / max(abs(self.total), 1e-300)

    def as_dict(self) -> dict[str, Any]:
        return {"c": self.c.tolist(), "f": self.f.tolist(), "Q": self.Q.tolist(),
                "total": self.total, "second_derivative_form": self.second_derivative,
                "closed_form_Q1": self.closed_form_Q1, "critical_c1": self.critical_c1,
                "total_negative": bool(self.total < 0), "rel_diff": self.rel_diff}


def site_sums(f: np.ndarray) -> np.ndarray:
    """Q_x = sum_{y,z} [(f_y - f_x) log(f_z / f_x) + (f_y - f_x)(f_z - f_x) / f_x]."""
    n = len(f)
    Q = np.zeros(n)
    for x in range(n):
        for y in range(n):
            for z in range(n):
                Q[x] += ((f[y] - f[x]) * np.log(f[z] / f[x])
                         + (f[y] - f[x]) * (f[z] - f[x]) / f[x])
    return Q


def one_particle_chain(c, f_sites):
    """Zero-range chain with a single particle and f given per occupied site."""
    c = np.asarray(c, dtype=float)
    L = len(c)
    chain = build_chain(preset_zero_range(np.stack([np.zeros(L), c], axis=1)))
    f = np.empty(L)
    for x in range(L):
        config = np.zeros(L, dtype=int)
        config[x] = 1
        f[chain.space.index_of(config)] = f_sites[x]
    return chain, f


def counterexample_42(c1: float, epsilon: float) -> Counterexample:
    """L = 3, N = 1, f = (1, 2, eps), rates (c1, 1, 1)."""
    if not c1 > 1:
        raise ValueError("c1 must exceed 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    c = np.array([c1, 1.0, 1.0])
    f_sites = np.array([1.0, 2.0, epsilon])
    L = 3
    Q = site_sums(f_sites)
    Z = np.sum(1 / c)
    total = float(np.dot(c, Q) / (Z * L**2))
    chain, f = one_particle_chain(c, f_sites)
    second = second_derivative_form(chain.gen, chain.pi, f)
    q1 = epsilon * (np.log(2) + epsilon + np.log(epsilon))
    critical = float(-(Q[1] + Q[2]) / Q[0]) if Q[0] < 0 else float("inf")
    return Counterexample(c, f_sites, Q, total, second, float(q1), critical)
