"""Finite state spaces, move sets, sparse generators and stationary measures.

Every chain is written in the move form ``Lf(eta) = sum_g c(eta, g) (f(g eta) - f(eta))``
with a fixed finite move set.  Moves are total maps on the state space: where a
move cannot act (no particle to move, occupied target, boundary) it maps the
state to itself and carries rate zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .models import ModelSpec, state_count
from .report import Report

DEFAULT_STATE_CAP = 2_000_000


class CapacityError(RuntimeError):
    """State space larger than the configured cap."""


@dataclass(frozen=True, eq=False)
class Moves:
    labels: tuple
    targets: np.ndarray  # (n_states, n_moves) state index reached by each move
    inverse: np.ndarray  # (n_moves,) id of the inverse move
    sites: np.ndarray | None = None  # (n_moves, 2) zero-based (x, y) for particle moves

    @property
    def count(self) -> int:
        return len(self.labels)

    def apply(self, state: int, move: int) -> int:
        return int(self.targets[state, move])


@dataclass(frozen=True, eq=False)
class StateSpace:
    family: str
    configs: np.ndarray  # (n_states, L) occupation vectors, lexicographic
    moves: Moves
    conserved_particles: int | None = None

    @property
    def size(self) -> int:
        return self.configs.shape[0]

    def __len__(self) -> int:
        return self.size

    @cached_property
    def _index(self) -> dict[tuple, int]:
        return {tuple(int(v) for v in row): i for i, row in enumerate(self.configs)}

    def index_of(self, config) -> int:
        if np.ndim(config) == 0:
            config = (config,)
        return self._index[tuple(int(v) for v in config)]

    def config(self, i: int) -> tuple:
        return tuple(int(v) for v in self.configs[i])


def _compositions(L: int, N: int) -> np.ndarray:
    """All vectors in N^L summing to N, in lexicographic order."""
    if L == 1:
        return np.array([[N]], dtype=np.int64)
    blocks = []
    for first in range(N + 1):
        rest = _compositions(L - 1, N - first)
        blocks.append(np.hstack([np.full((len(rest), 1), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


def _subsets(L: int, N: int) -> np.ndarray:
    """All 0/1 vectors of length L with N ones, in lexicographic order."""
    if N < 0 or N > L:
        return np.zeros((0, L), dtype=np.int64)
    if L == 0:
        return np.zeros((1, 0), dtype=np.int64)
    blocks = []
    for first in (0, 1):
        rest = _subsets(L - 1, N - first)
        if len(rest):
            blocks.append(np.hstack([np.full((len(rest), 1), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


def _lookup(configs: np.ndarray, queries: np.ndarray, base: int) -> np.ndarray:
    """Row indices of ``queries`` inside the lexicographically sorted ``configs``."""
    L = configs.shape[1]
    if L * math.log2(base) < 62:
        weights = base ** np.arange(L - 1, -1, -1, dtype=np.int64)
        keys = configs @ weights
        return np.searchsorted(keys, queries @ weights)
    index = {tuple(r): i for i, r in enumerate(configs.tolist())}
    return np.array([index[tuple(r)] for r in queries.tolist()], dtype=np.int64)


def enumerate_states(spec: ModelSpec, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    n = state_count(spec)
    if n > cap:
        raise CapacityError(f"{spec.family} with L={spec.L}, N={spec.N} has {n} states > cap {cap}")

    if spec.family == "birth_death":
        configs = (np.arange(spec.N + 1, dtype=np.int64) - spec.offset)[:, None]
        idx = np.arange(spec.N + 1)
        targets = np.stack([np.minimum(idx + 1, spec.N), np.maximum(idx - 1, 0)], axis=1)
        moves = Moves(("+", "-"), targets, np.array([1, 0]))
        return StateSpace("birth_death", configs, moves, None)

    L, N = spec.L, spec.N
    if spec.family == "zero_range":
        configs = _compositions(L, N)
    else:
        configs = _subsets(L, N)
    pairs = [(x, y) for x in range(L) for y in range(L) if x != y]
    pair_id = {p: k for k, p in enumerate(pairs)}
    targets = np.empty((len(configs), len(pairs)), dtype=np.int64)
    self_idx = np.arange(len(configs))
    for k, (x, y) in enumerate(pairs):
        if spec.family == "zero_range":
            can = configs[:, x] > 0
        else:
            can = (configs[:, x] == 1) & (configs[:, y] == 0)
        moved = configs[can].copy()
        moved[:, x] -= 1
        moved[:, y] += 1
        col = self_idx.copy()
        if len(moved):
            col[can] = _lookup(configs, moved, N + 1)
        targets[:, k] = col
    inverse = np.array([pair_id[(y, x)] for (x, y) in pairs])
    labels = tuple(f"{x + 1}{y + 1}" if L < 10 else f"{x + 1}-{y + 1}" for x, y in pairs)
    moves = Moves(labels, targets, inverse, np.array(pairs, dtype=np.int64))
    return StateSpace(spec.family, configs, moves, N)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Generator:
    rates: np.ndarray  # (n_states, n_moves), c(eta, g)
    moves: Moves
    matrix: sp.csr_matrix

    @property
    def size(self) -> int:
        return self.rates.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return self.moves.targets

    @property
    def max_rate(self) -> float:
        return float(np.max(np.abs(self.matrix.diagonal()), initial=0.0))

    def scaled(self, s: float) -> "Generator":
        return generator_from_rates(self.rates * s, self.moves)


def generator_from_rates(rates: np.ndarray, moves: Moves) -> Generator:
    rates = np.asarray(rates, dtype=float)
    n, g = rates.shape
    rows = np.repeat(np.arange(n), g)
    cols = moves.targets.ravel()
    data = rates.ravel()
    keep = (cols != rows) & (data != 0)
    off = sp.coo_matrix((data[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    mat = (off + sp.diags(diag)).tocsr()
    mat.sort_indices()
    rates = rates.copy()
    rates.setflags(write=False)
    return Generator(rates, moves, mat)


def build_generator(spec: ModelSpec, space: StateSpace) -> Generator:
    if space.family != spec.family:
        raise ValueError("state space was not enumerated from this model")
    n, g = space.size, space.moves.count
    rates = np.zeros((n, g))
    if spec.family == "birth_death":
        rates[:, 0] = spec.a
        rates[:, 1] = spec.b
    else:
        L = spec.L
        eta = space.configs
        for k, (x, y) in enumerate(space.moves.sites):
            if spec.family == "zero_range":
                rates[:, k] = spec.c[x, eta[:, x]] / L
            else:
                rates[:, k] = spec.lam[x] * eta[:, x] * (1 - eta[:, y]) / L
    if np.any(rates < 0):
        raise ValueError("negative rate")
    return generator_from_rates(rates, space.moves)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Measure:
    """Probability vector; ``log_weights`` stays exact where ``weights`` underflow."""

    log_weights: np.ndarray

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        w.setflags(write=False)
        return w

    @property
    def size(self) -> int:
        return len(self.log_weights)

    def __len__(self) -> int:
        return self.size

    @classmethod
    def from_log(cls, log_w) -> "Measure":
        log_w = np.asarray(log_w, dtype=float)
        if not np.all(np.isfinite(log_w)):
            raise ValueError("log-weights must be finite (measure must be strictly positive)")
        out = log_w - logsumexp(log_w)
        out.setflags(write=False)
        return cls(out)

    @classmethod
    def from_weights(cls, w) -> "Measure":
        w = np.asarray(w, dtype=float)
        if np.any(w <= 0):
            raise ValueError("measure weights must be strictly positive")
        return cls.from_log(np.log(w))

    def expect(self, f) -> float:
        return float(np.dot(self.weights, f))


def stationary_measure(spec: ModelSpec, space: StateSpace) -> Measure:
    if spec.family == "birth_death":
        with np.errstate(divide="ignore"):
            steps = np.log(spec.a[:-1]) - np.log(spec.b[1:])
        log_w = np.concatenate([[0.0], np.cumsum(steps)])
    elif spec.family == "zero_range":
        log_p = np.zeros_like(spec.c)
        log_p[:, 1:] = -np.cumsum(np.log(spec.c[:, 1:]), axis=1)
        eta = space.configs
        log_w = log_p[np.arange(spec.L)[None, :], eta].sum(axis=1)
    else:
        lam = spec.lam
        eta = space.configs
        log_w = eta @ (-np.log1p(lam)) + (1 - eta) @ (np.log(lam) - np.log1p(lam))
    return Measure.from_log(log_w)


def check_reversibility(gen: Generator, pi: Measure, tol: float = 1e-12) -> Report:
    """Detailed balance ``pi(eta) c(eta, g) = pi(g eta) c(g eta, g^-1)`` over positive rates."""
    n, g = gen.rates.shape
    if pi.size != n:
        raise ValueError("measure and generator live on different spaces")
    s, m = np.nonzero(gen.rates > 0)
    t = gen.targets[s, m]
    back = gen.rates[t, gen.moves.inverse[m]]
    lw = pi.log_weights
    fwd_flux = pi.weights[s] * gen.rates[s, m]
    bwd_flux = pi.weights[t] * back
    abs_viol = np.abs(fwd_flux - bwd_flux)
    with np.errstate(divide="ignore"):
        log_ratio = lw[t] + np.log(back) - lw[s] - np.log(gen.rates[s, m])
    rel_viol = np.where(back > 0, np.abs(np.expm1(np.minimum(log_ratio, 700.0))), np.inf)
    bad = rel_viol > tol
    offenders = [(int(a), gen.moves.labels[b], float(r))
                 for a, b, r in zip(s[bad], m[bad], rel_viol[bad])][:50]
    return Report("reversibility", not bad.any(),
                  max_violation=float(rel_viol.max(initial=0.0)),
                  details={"max_abs_violation": float(abs_viol.max(initial=0.0)),
                           "pairs_checked": int(len(s)), "tol": tol},
                  offenders=offenders)


def check_involution(gen: Generator) -> Report:
    s, m = np.nonzero(gen.rates > 0)
    back = gen.targets[gen.targets[s, m], gen.moves.inverse[m]]
    bad = back != s
    return Report("move_involution", not bad.any(), float(bad.sum()),
                  offenders=[(int(a), gen.moves.labels[b]) for a, b in zip(s[bad], m[bad])][:50])


def check_generator(gen: Generator) -> Report:
    """Row sums vanish and off-diagonal entries are nonnegative."""
    mat = gen.matrix
    row_sums = np.abs(np.asarray(mat.sum(axis=1)).ravel())
    off = mat - sp.diags(mat.diagonal())
    neg = float(-off.data.min(initial=0.0))
    scale = max(gen.max_rate, np.finfo(float).tiny)
    worst = float(row_sums.max(initial=0.0))
    ok = worst <= 1e-12 * scale and neg <= 0.0
    return Report("generator", ok, worst / scale, details={"most_negative_offdiag": -neg})


def apply_generator(gen: Generator, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (gen.size,):
        raise ValueError(f"function has shape {f.shape}, expected ({gen.size},)")
    return gen.matrix @ f


@dataclass(frozen=True, eq=False)
class Chain:
    """A model together with its enumerated space, generator and stationary law."""

    spec: ModelSpec
    space: StateSpace
    gen: Generator
    pi: Measure

    @property
    def size(self) -> int:
        return self.space.size


def build_chain(spec: ModelSpec, cap: int = DEFAULT_STATE_CAP) -> Chain:
    space = enumerate_states(spec, cap)
    return Chain(spec, space, build_generator(spec, space), stationary_measure(spec, space))
