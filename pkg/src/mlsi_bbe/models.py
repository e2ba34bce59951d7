"""Model specifications and the named rate presets.

A :class:`ModelSpec` is a declarative description of one of three chain
families:

``birth_death``
    a one-dimensional chain on ``{0..N}`` (or ``{-n_max..n_max}`` stored with an
    index shift) with birth rates ``a`` and death rates ``b``;
``zero_range``
    ``N`` particles on the complete graph with ``L`` vertices, a particle leaving
    site ``x`` at total rate ``c_x(eta_x)``;
``bernoulli_laplace``
    exclusion dynamics on the complete graph with site intensities ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

FAMILIES = ("birth_death", "zero_range", "bernoulli_laplace")


class ModelError(ValueError):
    """Invalid model parameters."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    family: str
    L: int
    N: int
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    c: np.ndarray | None = None
    lam: np.ndarray | None = None
    # one-dimensional chains: configuration value = index - offset
    offset: int = 0
    certified: float | None = None
    certified_source: str = ""
    preset: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}")
        if self.L < 1:
            raise ModelError("L must be >= 1")
        if self.N < 0:
            raise ModelError("N must be >= 0")
        for name in ("a", "b", "c", "lam"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        getattr(self, f"_check_{self.family}")()

    def _check_birth_death(self):
        if self.L != 1:
            raise ModelError("birth_death chains have L = 1")
        if self.N < 1:
            raise ModelError("birth_death truncation N_max must be >= 1")
        if self.a is None or self.b is None:
            raise ModelError("birth_death needs rate arrays a and b")
        if self.a.shape != (self.N + 1,) or self.b.shape != (self.N + 1,):
            raise ModelError(f"rate arrays must have length N_max + 1 = {self.N + 1}")
        if np.any(self.a < 0) or np.any(self.b < 0):
            raise ModelError("negative rate")
        if not np.all(np.isfinite(self.a)) or not np.all(np.isfinite(self.b)):
            raise ModelError("non-finite rate")
        if self.b[0] != 0:
            raise ModelError("b(0) must be 0 (no death move out of the lowest state)")
        if self.a[-1] != 0:
            raise ModelError("birth rate at the truncation boundary must be 0")
        if np.any(self.a[:-1] <= 0) or np.any(self.b[1:] <= 0):
            raise ModelError("interior rates must be strictly positive (irreducibility)")

    def _check_zero_range(self):
        if self.c is None:
            raise ModelError("zero_range needs a rate table c")
        if self.c.shape != (self.L, self.N + 1):
            raise ModelError(f"rate table must have shape (L, N + 1) = {(self.L, self.N + 1)}")
        if np.any(self.c[:, 0] != 0):
            raise ModelError("c_x(0) must be 0")
        if np.any(self.c[:, 1:] <= 0) or not np.all(np.isfinite(self.c)):
            raise ModelError("c_x(n) must be finite and > 0 for n > 0")

    def _check_bernoulli_laplace(self):
        if self.lam is None:
            raise ModelError("bernoulli_laplace needs intensities lam")
        if self.lam.shape != (self.L,):
            raise ModelError(f"lam must have length L = {self.L}")
        if np.any(self.lam <= 0) or not np.all(np.isfinite(self.lam)):
            raise ModelError("intensities must be finite and > 0")
        if self.N > self.L:
            raise ModelError("Bernoulli-Laplace needs N <= L")

    def scaled(self, s: float) -> "ModelSpec":
        """Same model with every rate multiplied by ``s``."""
        if s <= 0:
            raise ModelError("scale must be positive")
        kw = dict(self.__dict__)
        for name in ("a", "b", "c", "lam"):
            if kw[name] is not None:
                kw[name] = kw[name] * s
        if kw["certified"] is not None:
            kw["certified"] = kw["certified"] * s
        kw["params"] = {**self.params, "rate_scale": s * self.params.get("rate_scale", 1.0)}
        return ModelSpec(**kw)

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"family": self.family, "L": self.L, "N": self.N,
                               "preset": self.preset, "params": dict(self.params)}
        if self.certified is not None:
            out["reference_certified"] = {"value": self.certified, "source": self.certified_source}
        return out


# ---------------------------------------------------------------------------
# birth-death presets


def birth_death(a, b, offset: int = 0, **meta) -> ModelSpec:
    a = np.asarray(a, dtype=float)
    return ModelSpec("birth_death", 1, len(a) - 1, a=a, b=b, offset=offset, **meta)


def preset_poisson(lam: float, n_max: int) -> ModelSpec:
    """M/M/infinity queue: a(n) = lam, b(n) = n, truncated at ``n_max``."""
    if lam <= 0:
        raise ModelError("lambda must be positive")
    if n_max < 2:
        raise ModelError("n_max must be >= 2")
    a = np.full(n_max + 1, float(lam))
    a[-1] = 0.0
    b = np.arange(n_max + 1, dtype=float)
    return birth_death(a, b, certified=1.0, certified_source="poisson: assumption (A) with c = 1",
                       preset="poisson", params={"lambda": lam, "n_max": n_max})


def check_log_concave(gamma) -> None:
    g = np.asarray(gamma, dtype=float)
    if np.any(g <= 0):
        raise ModelError("gamma must be strictly positive")
    for n in range(1, len(g) - 1):
        # relative slack for round-off in user-supplied tables
        if g[n] ** 2 < g[n + 1] * g[n - 1] * (1 - 1e-13):
            raise ModelError(f"log-concavity violated at n = {n}: "
                             f"gamma(n)^2 = {g[n] ** 2!r} < {g[n + 1] * g[n - 1]!r}")


def preset_ultra_log_concave(gamma) -> ModelSpec:
    """Chain with a = 1 whose stationary law has n! pi(n) proportional to gamma(n)."""
    gamma = np.asarray(gamma, dtype=float)
    if len(gamma) < 3:
        raise ModelError("need at least three gamma values")
    check_log_concave(gamma)
    n = np.arange(len(gamma))
    b = np.zeros(len(gamma))
    b[1:] = n[1:] * gamma[:-1] / gamma[1:]
    a = np.ones(len(gamma))
    a[-1] = 0.0
    return birth_death(a, b, certified=float(b[1]),
                       certified_source="ultra log-concave: alpha = b(1) = gamma(0)/gamma(1)",
                       preset="ultra_log_concave", params={"gamma": gamma.tolist()})


def preset_segment(kind: str, n: int) -> ModelSpec:
    """Random walk on {0..n}: uniform law (a = b = 1) or the Gaussian reference law."""
    if n < 2:
        raise ModelError("segment length must be >= 2")
    a = np.ones(n + 1)
    a[-1] = 0.0
    k = np.arange(n + 1, dtype=float)
    if kind == "uniform":
        b = np.ones(n + 1)
    elif kind == "gaussian":
        # pi(k) ~ exp(-k^2/n^2), so b(k) = pi(k-1)/pi(k)
        b = np.exp((2 * k - 1) / n**2)
    else:
        raise ModelError(f"unknown segment kind {kind!r}")
    b[0] = 0.0
    return birth_death(a, b, preset=f"segment_{kind}", params={"n": n})


def preset_double_sided_poisson(lam: float, n_max: int) -> ModelSpec:
    """Chain on {-n_max..n_max} reversible for pi(n) ~ lam^|n| / |n|!."""
    if not 0 < lam < 1:
        raise ModelError("lambda must lie in (0, 1)")
    if n_max < 2:
        raise ModelError("n_max must be >= 2")
    n = np.arange(-n_max, n_max + 1, dtype=float)
    a = np.where(n >= 0, lam, -n)
    b = np.where(n <= 0, lam, n)
    a[-1] = 0.0
    b[0] = 0.0
    return birth_death(a, b, offset=n_max, certified=1.0 - lam,
                       certified_source="double-sided Poisson: assumption (A) on Z with c = 1 - lambda",
                       preset="double_sided_poisson", params={"lambda": lam, "n_max": n_max})


def preset_two_point(rate: float = 1.0) -> ModelSpec:
    """Symmetric two-state chain jumping at ``rate`` in each direction (gap = 2 * rate)."""
    if rate <= 0:
        raise ModelError("rate must be positive")
    return birth_death([rate, 0.0], [0.0, rate], preset="two_point", params={"rate": rate})


def preset_perturbed_linear(amplitude: float, n_max: int) -> ModelSpec:
    """a = 1 and the non-monotone death rate b(n) = n + amplitude * sin(n)."""
    if n_max < 2:
        raise ModelError("n_max must be >= 2")
    n = np.arange(n_max + 1, dtype=float)
    b = n + amplitude * np.sin(n)
    b[0] = 0.0
    a = np.ones(n_max + 1)
    a[-1] = 0.0
    return birth_death(a, b, preset="perturbed_linear",
                       params={"amplitude": amplitude, "n_max": n_max})


# ---------------------------------------------------------------------------
# particle systems


def preset_zero_range(c_tables) -> ModelSpec:
    c = np.asarray(c_tables, dtype=float)
    if c.ndim != 2:
        raise ModelError("zero-range rate table must be two-dimensional (L, N + 1)")
    return ModelSpec("zero_range", c.shape[0], c.shape[1] - 1, c=c, preset="zero_range",
                     params={"c": c.tolist()})


def preset_linear_zero_range(a_x, n: int) -> ModelSpec:
    """Independent walkers: c_x(k) = a_x * k."""
    a_x = np.asarray(a_x, dtype=float)
    if np.any(a_x <= 0):
        raise ModelError("a_x must be positive")
    c = np.outer(a_x, np.arange(n + 1, dtype=float))
    return ModelSpec("zero_range", len(a_x), n, c=c, preset="linear_zr",
                     params={"a": a_x.tolist(), "N": n})


def preset_bernoulli_laplace(lambdas, n: int) -> ModelSpec:
    lam = np.asarray(lambdas, dtype=float)
    return ModelSpec("bernoulli_laplace", len(lam), n, lam=lam, preset="bernoulli_laplace",
                     params={"lambda": lam.tolist(), "N": n})


def preset_homogeneous_bl(L: int, n: int, lam: float = 1.0) -> ModelSpec:
    spec = preset_bernoulli_laplace(np.full(L, float(lam)), n)
    return ModelSpec(**{**spec.__dict__, "preset": "homogeneous_bl",
                        "params": {"L": L, "N": n, "lambda": lam}})


PRESETS: dict[str, Callable[..., ModelSpec]] = {
    "poisson": lambda **p: preset_poisson(p["lambda"], p["n_max"]),
    "ultra_log_concave": lambda **p: preset_ultra_log_concave(p["gamma"]),
    "segment_uniform": lambda **p: preset_segment("uniform", p["n"]),
    "segment_gaussian": lambda **p: preset_segment("gaussian", p["n"]),
    "double_sided_poisson": lambda **p: preset_double_sided_poisson(p["lambda"], p["n_max"]),
    "two_point": lambda **p: preset_two_point(p.get("rate", 1.0)),
    "perturbed_linear": lambda **p: preset_perturbed_linear(p["amplitude"], p["n_max"]),
    "linear_zr": lambda **p: preset_linear_zero_range(p["a"], p["N"]),
    "zero_range": lambda **p: preset_zero_range(p["c"]),
    "bernoulli_laplace": lambda **p: preset_bernoulli_laplace(p["lambda"], p["N"]),
    "homogeneous_bl": lambda **p: preset_homogeneous_bl(p["L"], p["N"], p.get("lambda", 1.0)),
}

# required and optional parameter names per preset; unknown keys are rejected
PRESET_PARAMS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "poisson": (("lambda", "n_max"), ()),
    "ultra_log_concave": (("gamma",), ()),
    "segment_uniform": (("n",), ()),
    "segment_gaussian": (("n",), ()),
    "double_sided_poisson": (("lambda", "n_max"), ()),
    "two_point": ((), ("rate",)),
    "perturbed_linear": (("amplitude", "n_max"), ()),
    "linear_zr": (("a", "N"), ()),
    "zero_range": (("c",), ()),
    "bernoulli_laplace": (("lambda", "N"), ()),
    "homogeneous_bl": (("L", "N"), ("lambda",)),
}


def make_preset(name: str, **params) -> ModelSpec:
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    required, optional = PRESET_PARAMS[name]
    missing = [k for k in required if k not in params]
    if missing:
        raise ModelError(f"preset {name!r} missing parameter(s) {missing}")
    unknown = [k for k in params if k not in required + optional]
    if unknown:
        raise ModelError(f"preset {name!r} got unknown parameter(s) {unknown}")
    return PRESETS[name](**params)


def state_count(spec: ModelSpec) -> int:
    if spec.family == "birth_death":
        return spec.N + 1
    if spec.family == "zero_range":
        return math.comb(spec.N + spec.L - 1, spec.L - 1)
    return math.comb(spec.L, spec.N)
