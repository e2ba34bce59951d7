"""R-functions, the discrete Bochner identity and curvature certificates.

An R-function is a nonnegative weight on (state, move, move) triples.  When it
is symmetric in the two moves (P1), satisfies the shift identity against the
stationary law (P2), and only charges commuting pairs of moves (P3), the
averaged mixed gradient against R equals a quarter of the averaged double
gradient.  Subtracting R from ``c c`` then lower-bounds the entropy second
derivative, and a uniform comparison with the Dirichlet form certifies a
convex exponential entropy decay rate ``kappa``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .chain import Generator, Measure, StateSpace
from .functionals import _positive, _w, _xlogy_excess, second_derivative_form
from .models import ModelSpec
from .report import Report


@dataclass(frozen=True, eq=False)
class RFunction:
    """Sparse triples ``(state, g, d) -> value``; absent triples are 0."""

    n_states: int
    n_moves: int
    state: np.ndarray
    g: np.ndarray
    d: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        if np.any(self.value < 0):
            raise ValueError("R must be nonnegative")
        for name in ("state", "g", "d", "value"):
            getattr(self, name).setflags(write=False)

    @classmethod
    def from_dense(cls, table: np.ndarray) -> "RFunction":
        s, g, d = np.nonzero(table)
        return cls(table.shape[0], table.shape[1], s, g, d, table[s, g, d].astype(float))

    @classmethod
    def zero(cls, n_states: int, n_moves: int) -> "RFunction":
        e = np.zeros(0, dtype=np.int64)
        return cls(n_states, n_moves, e, e, e, np.zeros(0))

    def __len__(self) -> int:
        return len(self.value)

    def keys(self) -> np.ndarray:
        return (self.state * self.n_moves + self.g) * self.n_moves + self.d

    def __call__(self, state: int, g: int, d: int) -> float:
        key = (state * self.n_moves + g) * self.n_moves + d
        hit = np.nonzero(self.keys() == key)[0]
        return float(self.value[hit].sum()) if len(hit) else 0.0

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_states, self.n_moves, self.n_moves))
        np.add.at(out, (self.state, self.g, self.d), self.value)
        return out


# ---------------------------------------------------------------------------
# canonical choices


def _require(spec: ModelSpec, family: str) -> None:
    if spec.family != family:
        raise ValueError(f"expected a {family} model, got {spec.family}")


def r_birth_death(spec: ModelSpec) -> RFunction:
    _require(spec, "birth_death")
    a, b = spec.a, spec.b
    n = len(a)
    a_next = np.append(a[1:], 0.0)
    b_prev = np.concatenate([[0.0], b[:-1]])
    table = np.zeros((n, 2, 2))
    table[:, 0, 0] = a * a_next
    table[:, 1, 1] = b * b_prev
    table[:, 0, 1] = table[:, 1, 0] = a * b
    return RFunction.from_dense(table)


def r_zero_range(spec: ModelSpec, space: StateSpace) -> RFunction:
    _require(spec, "zero_range")
    L = spec.L
    eta = space.configs
    sites = np.arange(L)[None, :]
    c_now = spec.c[sites, eta]
    c_prev = np.where(eta > 0, spec.c[sites, np.maximum(eta - 1, 0)], 0.0)
    X = space.moves.sites[:, 0]
    same = X[:, None] == X[None, :]
    cx = c_now[:, X]
    table = np.where(same[None], (cx * c_prev[:, X])[:, :, None],
                     cx[:, :, None] * cx[:, None, :]) / L**2
    return RFunction.from_dense(table)


def r_bernoulli_laplace(spec: ModelSpec, space: StateSpace) -> RFunction:
    _require(spec, "bernoulli_laplace")
    L = spec.L
    eta = space.configs
    X, Y = space.moves.sites[:, 0], space.moves.sites[:, 1]
    act = spec.lam[X][None, :] * eta[:, X] * (1 - eta[:, Y])
    distinct = ((X[:, None] != X[None, :]) & (X[:, None] != Y[None, :])
                & (Y[:, None] != X[None, :]) & (Y[:, None] != Y[None, :]))
    table = act[:, :, None] * act[:, None, :] * distinct[None] / L**2
    return RFunction.from_dense(table)


def canonical_r(spec: ModelSpec, space: StateSpace) -> RFunction:
    if spec.family == "birth_death":
        return r_birth_death(spec)
    if spec.family == "zero_range":
        return r_zero_range(spec, space)
    return r_bernoulli_laplace(spec, space)


# ---------------------------------------------------------------------------
# (P1)-(P3)


def check_P1(R: RFunction) -> Report:
    """Symmetry R(eta, g, d) = R(eta, d, g) on every stored positive triple."""
    pos = R.value > 0
    keys = R.keys()
    order = np.argsort(keys)
    sk, sv = keys[order], R.value[order]
    mate = (R.state * R.n_moves + R.d) * R.n_moves + R.g
    loc = np.clip(np.searchsorted(sk, mate), 0, max(len(sk) - 1, 0))
    found = (sk[loc] == mate) if len(sk) else np.zeros(0, bool)
    mate_val = np.where(found, sv[loc] if len(sv) else 0.0, 0.0)
    bad = pos & (mate_val != R.value)
    offenders = [(int(s), int(g), int(d)) for s, g, d in
                 zip(R.state[bad], R.g[bad], R.d[bad])][:50]
    return Report("P1", not bad.any(), float(np.abs(mate_val - R.value)[bad].max(initial=0.0)),
                  details={"triples": int(pos.sum())}, offenders=offenders)


def check_P3(R: RFunction, space: StateSpace | Generator) -> Report:
    """Commutation g(d(eta)) = d(g(eta)) wherever R > 0 (exact, on state indices)."""
    T = space.moves.targets
    pos = R.value > 0
    s, g, d = R.state[pos], R.g[pos], R.d[pos]
    gd = T[T[s, d], g]
    dg = T[T[s, g], d]
    bad = gd != dg
    offenders = [(int(a), int(b), int(c)) for a, b, c in zip(s[bad], g[bad], d[bad])][:50]
    return Report("P3", not bad.any(), float(bad.sum()), details={"triples": int(pos.sum())},
                  offenders=offenders)


def check_P2(R: RFunction, pi, moves, tol: float = 1e-12) -> Report:
    """Shift identity of R against pi, checked on the full indicator basis.

    For psi the indicator of (eta0, g0, d0) the identity reads
    ``pi(eta0) R(eta0, g0, d0) = sum over eta with g0^{-1}(eta) = eta0 of
    pi(eta) R(eta, g0^{-1}, d0)``.  Both sides are accumulated by key and
    compared over the union of keys, which is equivalent to the identity for all
    bounded psi on a finite space.
    """
    w = _w(pi)
    T, inv = moves.targets, moves.inverse
    G = R.n_moves
    mass = w[R.state] * R.value
    lhs_keys = R.keys()
    rhs_keys = (T[R.state, R.g] * G + inv[R.g]) * G + R.d
    keys, idx = np.unique(np.concatenate([lhs_keys, rhs_keys]), return_inverse=True)
    lhs = np.zeros(len(keys))
    rhs = np.zeros(len(keys))
    np.add.at(lhs, idx[:len(mass)], mass)
    np.add.at(rhs, idx[len(mass):], mass)
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    rel = np.divide(np.abs(lhs - rhs), scale, out=np.zeros_like(scale), where=scale > 0)
    bad = rel > tol
    nm = G * G
    offenders = [(int(k // nm), int(k // G % G), int(k % G), float(r))
                 for k, r in zip(keys[bad], rel[bad])][:50]
    return Report("P2", not bad.any(), float(rel.max(initial=0.0)),
                  details={"basis_size": int(len(keys)), "tol": tol}, offenders=offenders)


# ---------------------------------------------------------------------------
# identity and Gamma form


def _double_gradient(T: np.ndarray, f: np.ndarray, s, g, d) -> np.ndarray:
    gs, ds = T[s, g], T[s, d]
    return f[T[gs, d]] - f[gs] - f[ds] + f[s]


def bochner_sides(R: RFunction, gen: Generator, pi, f, g) -> tuple[float, float, float]:
    """Both sides of the Bochner identity and an absolute-value scale for them."""
    w = _w(pi)
    T = gen.targets
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    s, a, b = R.state, R.g, R.d
    wr = w[s] * R.value
    mixed = wr * (f[T[s, a]] - f[s]) * (g[T[s, b]] - g[s])
    double = 0.25 * wr * _double_gradient(T, f, s, a, b) * _double_gradient(T, g, s, a, b)
    scale = max(float(np.abs(mixed).sum()), float(np.abs(double).sum()))
    return float(mixed.sum()), float(double.sum()), scale


def bochner_residual(R: RFunction, gen: Generator, pi, f, g) -> float:
    lhs, rhs, _ = bochner_sides(R, gen, pi, f, g)
    return lhs - rhs


def r_correction(R: RFunction, gen: Generator, pi, f) -> float:
    """pi[sum R (grad_g f grad_d log f + grad_g f grad_d f / f)]."""
    w = _w(pi)
    T = gen.targets
    logf = np.log(f)
    s, a, b = R.state, R.g, R.d
    dfa = f[T[s, a]] - f[s]
    terms = R.value * dfa * ((logf[T[s, b]] - logf[s]) + (f[T[s, b]] - f[s]) / f[s])
    return float(np.dot(w[s], terms))


def gamma_form(gen: Generator, pi, R: RFunction, f) -> float:
    """pi[sum Gamma (grad f grad log f + grad f grad f / f)] with Gamma = c c - R.

    The ``c c`` part factorizes per state into ``Lf L log f + (Lf)^2 / f``, so
    only the sparse R support is streamed.
    """
    f = _positive(f, gen.size)
    return second_derivative_form(gen, pi, f) - r_correction(R, gen, pi, f)


# ---------------------------------------------------------------------------
# scalar inequalities


def _phi(alpha, beta):
    """alpha log alpha - alpha log beta + beta - alpha >= 0, evaluated without cancellation."""
    beta = np.asarray(beta, dtype=float)
    return beta * _xlogy_excess(np.asarray(alpha, dtype=float) / beta - 1.0)


def four_point_terms(a, b, c, d) -> np.ndarray:
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    return np.stack([_phi(d, b * c / a), _phi(c, d * a / b), _phi(b, d * a / c), _phi(a, b * c / d)])


def four_point_nonneg(a, b, c, d):
    """Minimum of the four bracketed expressions (each >= 0 for positive inputs)."""
    out = four_point_terms(a, b, c, d).min(axis=0)
    return float(out) if out.ndim == 0 else out


def bl_three_site_F(alpha, beta):
    """beta/alpha + alpha/beta + alpha beta - alpha - beta - 1.

    Computed as (alpha - beta)^2/(alpha beta) + (alpha - 1)(beta - 1), an exact
    rewrite whose terms are nonnegative for alpha, beta >= 1.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    out = (alpha - beta) ** 2 / (alpha * beta) + (alpha - 1) * (beta - 1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# certificates


@dataclass
class Certificate:
    kind: str  # theorem1_A | theorem2_B | thmBL_B | none
    kappa: float
    witness: dict[str, Any] = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.kind != "none" and self.kappa > 0

    def recompute(self) -> float:
        """Re-derive kappa from the witness by the theorem's formula."""
        if self.kind == "theorem1_A":
            return float(min(self.witness["increments"]))
        if self.kind in ("theorem2_B", "thmBL_B"):
            return self.witness["c"] - self.witness["delta"]
        return 0.0

    def as_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "kappa": self.kappa, "tag": "certified_lower_bound",
                "witness": self.witness}


def check_assumption_A(spec: ModelSpec) -> Certificate:
    """Monotone rates with a(n) - a(n+1) + b(n+1) - b(n) >= c > 0 on the truncated range."""
    _require(spec, "birth_death")
    a, b = spec.a, spec.b
    da = a[:-1] - a[1:]
    db = b[1:] - b[:-1]
    inc = da + db
    a_mono = bool(np.all(da >= 0))
    b_mono = bool(np.all(db >= 0))
    kappa = float(inc.min())
    witness = {"increments": inc.tolist(), "argmin": int(np.argmin(inc)) - spec.offset,
               "a_nonincreasing": a_mono, "b_nondecreasing": b_mono}
    if a_mono and b_mono and kappa > 0:
        return Certificate("theorem1_A", kappa, witness)
    return Certificate("none", 0.0, witness)


def condition_B(increments: np.ndarray) -> tuple[float, float]:
    c = float(np.min(increments))
    return c, float(np.max(increments)) - c


def zero_range_Ax(spec: ModelSpec, space: StateSpace) -> tuple[np.ndarray, np.ndarray]:
    """A_x(eta) for every (state, site); entries with eta_x = 0 are NaN."""
    _require(spec, "zero_range")
    inc = np.diff(spec.c, axis=1)
    if np.any(inc < 0):
        x, n = np.argwhere(inc < 0)[0]
        raise ValueError(f"c_{x + 1} decreases at n = {n}")
    L = spec.L
    eta = space.configs
    sites = np.arange(L)[None, :]
    up = np.where(eta < spec.N, spec.c[sites, np.minimum(eta + 1, spec.N)] - spec.c[sites, eta], 0.0)
    down = np.where(eta > 0, spec.c[sites, eta] - spec.c[sites, np.maximum(eta - 1, 0)], 0.0)
    others = up.sum(axis=1, keepdims=True) - up
    A = down * (1 - 1 / (2 * L)) - others / (2 * L)
    return np.where(eta > 0, A, np.nan), eta > 0


def zero_range_Ax_min(spec: ModelSpec, space: StateSpace) -> float:
    A, occupied = zero_range_Ax(spec, space)
    return float(np.min(A[occupied]))


def certified_kappa(spec: ModelSpec) -> Certificate:
    if spec.family == "birth_death":
        return check_assumption_A(spec)
    if spec.family == "zero_range":
        if spec.N == 0:
            return Certificate("none", 0.0, {"reason": "no particles"})
        c, delta = condition_B(np.diff(spec.c, axis=1))
        kind = "theorem2_B"
    else:
        c, delta = condition_B(spec.lam)
        kind = "thmBL_B"
    witness = {"c": c, "delta": delta}
    if delta < c:
        return Certificate(kind, c - delta, witness)
    return Certificate("none", 0.0, witness)
