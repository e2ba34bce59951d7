"""Entropy, variance, Dirichlet forms and the entropy second-derivative form.

Functions take a :class:`~mlsi_bbe.chain.Measure` (or a plain probability
vector) and real vectors indexed by states.  ``0 log 0`` is taken as 0.
"""

from __future__ import annotations

import numpy as np

from .chain import Generator, Measure

# entries of f below this are rejected where f > 0 is required
POSITIVITY_FLOOR = 1e-300


def _w(pi) -> np.ndarray:
    return pi.weights if isinstance(pi, Measure) else np.asarray(pi, dtype=float)


def _vec(f, n: int | None = None) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim != 1:
        raise ValueError("state functions are one-dimensional")
    if n is not None and f.shape[0] != n:
        raise ValueError(f"function has {f.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(f)):
        raise ValueError("state function has non-finite entries")
    return f


def _positive(f, n: int | None = None) -> np.ndarray:
    f = _vec(f, n)
    if np.any(f < POSITIVITY_FLOOR):
        raise ValueError("function must be strictly positive")
    return f


def gradient(gen: Generator, f) -> np.ndarray:
    """Table of discrete gradients ``f(g eta) - f(eta)``, shape (n_states, n_moves)."""
    f = np.asarray(f, dtype=float)
    return f[gen.targets] - f[:, None]


def _xlogy_excess(u: np.ndarray) -> np.ndarray:
    """(1 + u) log(1 + u) - u, accurate for small |u|; equals 1 at u = -1."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-2
    us = u[small]
    # alternating series sum_{k>=2} (-1)^k u^k / (k (k - 1))
    acc = np.zeros_like(us)
    p = us * us
    for k in range(2, 12):
        acc += (1 if k % 2 == 0 else -1) * p / (k * (k - 1))
        p = p * us
    out[small] = acc
    ub = u[~small]
    with np.errstate(divide="ignore", invalid="ignore"):
        big = np.where(ub > -1, (1 + ub) * np.log1p(np.maximum(ub, -1 + 1e-300)) - ub, 1.0)
    out[~small] = big
    return out


def entropy(pi, f, breakdown: bool = False):
    """Ent_pi(f) = pi[f log f] - pi[f] log pi[f] for f >= 0.

    Evaluated as ``m * pi[h(f/m - 1)]`` with ``m = pi[f]`` and
    ``h(u) = (1+u) log(1+u) - u >= 0`` so every term is nonnegative and nearly
    constant f does not cancel catastrophically.
    """
    w = _w(pi)
    f = _vec(f, len(w))
    if np.any(f < 0):
        raise ValueError("entropy needs f >= 0")
    m = float(np.dot(w, f))
    if m <= 0:
        raise ValueError("entropy needs pi[f] > 0")
    terms = m * w * _xlogy_excess(f / m - 1.0)
    value = float(terms.sum())
    return (value, terms) if breakdown else value


def relative_entropy(mu, pi) -> float:
    """h(mu | pi) = sum mu log(mu / pi); +inf when mu charges a pi-null state."""
    if isinstance(mu, Measure) and isinstance(pi, Measure):
        if mu.size != pi.size:
            raise ValueError("dimension mismatch")
        return float(np.dot(mu.weights, mu.log_weights - pi.log_weights))
    m, p = np.asarray(_w(mu), dtype=float), np.asarray(_w(pi), dtype=float)
    if m.shape != p.shape:
        raise ValueError("dimension mismatch")
    pos = m > 0
    if np.any(p[pos] <= 0):
        return float("inf")
    return float(np.sum(m[pos] * (np.log(m[pos]) - np.log(p[pos]))))


def total_variation(mu, pi) -> float:
    return 0.5 * float(np.abs(_w(mu) - _w(pi)).sum())


def pinsker_check(mu, pi) -> tuple[float, bool]:
    tv = total_variation(mu, pi)
    return tv, tv**2 <= relative_entropy(mu, pi) + 1e-12


def variance(pi, f) -> float:
    w = _w(pi)
    f = _vec(f, len(w))
    m = np.dot(w, f)
    return float(np.dot(w, (f - m) ** 2))


def dirichlet_form(gen: Generator, pi, f, g, breakdown: bool = False):
    """E(f, g) = 1/2 pi[sum_g c (grad f)(grad g)]."""
    w = _w(pi)
    f, g = _vec(f, gen.size), _vec(g, gen.size)
    terms = 0.5 * w[:, None] * gen.rates * gradient(gen, f) * gradient(gen, g)
    value = float(terms.sum())
    return (value, terms) if breakdown else value


def dirichlet_form_dual(gen: Generator, pi, f, g) -> float:
    """E(f, g) = -pi[f Lg], the operator form used to cross-check the half-sum."""
    w = _w(pi)
    return -float(np.dot(w * _vec(f, gen.size), gen.matrix @ _vec(g, gen.size)))


def mlsi_form(gen: Generator, pi, f, breakdown: bool = False):
    """E(f, log f); every per-edge term (grad f)(grad log f) is nonnegative."""
    f = _positive(f, gen.size)
    return dirichlet_form(gen, pi, f, np.log(f), breakdown=breakdown)


def second_derivative_form(gen: Generator, pi, f) -> float:
    """pi[Lf L log f] + pi[(Lf)^2 / f], the second time-derivative of Ent_pi(T_t f) at 0."""
    w = _w(pi)
    f = _positive(f, gen.size)
    lf = gen.matrix @ f
    llog = gen.matrix @ np.log(f)
    return float(np.dot(w, lf * llog) + np.dot(w, lf * lf / f))


def lsi_numerator(gen: Generator, pi, f) -> float:
    return dirichlet_form(gen, pi, f, f)
