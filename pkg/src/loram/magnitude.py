"""Scalar magnitude analytics for low-rank adapters.

Covers the magnitude metric ``nu``, spectral concentration ``rho[r]`` and
spectral gain ``Q[r]`` of a weight matrix, the logarithmic gain approximation,
the per-step update variance, and the expected-magnitude dynamics of A and B
under i.i.d. Gaussian gradients.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import svd

__all__ = [
    "RANK_TOL",
    "nu",
    "effective_rank",
    "rho",
    "gain_q",
    "gain_log",
    "k1_rate",
    "k2_rate",
    "predict_step_variance",
    "DynamicsParams",
    "predict_dynamics",
    "iterate_dynamics",
    "SpectralReport",
    "spectral_report",
]

RANK_TOL = 1e-10


def nu(w) -> float:
    """Mean squared entry, ``||w||_F^2 / (rows * cols)``."""
    w = np.asarray(w, dtype=np.float64)
    return float(np.vdot(w, w) / w.size)


def effective_rank(s, tol: float = RANK_TOL) -> int:
    """Number of singular values above ``tol * s_max``."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 or s.max() <= 0:
        return 0
    return int(np.count_nonzero(s > tol * s.max()))


def _check_spectrum(s, r):
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty spectrum")
    if np.any(s < 0) or np.any(np.diff(s) > 0):
        raise ValueError("singular values must be non-negative and descending")
    if not 1 <= r <= s.size:
        raise ValueError(f"rank {r} outside [1, {s.size}]")
    rk = effective_rank(s)
    if rk == 0:
        raise ValueError("all-zero spectrum")
    return s, rk


def rho(s, r: int) -> float:
    """Spectral concentration: squared mean of the top-r singular values over
    the mean square of the numerically non-zero ones."""
    s, rk = _check_spectrum(s, r)
    top = s[:r].sum() / r
    energy = np.square(s[:rk]).sum() / rk
    return float(top * top / energy)


def gain_q(s, r: int) -> float:
    """Spectral gain ``rho[r] * r / R`` with R the effective rank; lies in [0, 1]."""
    s, rk = _check_spectrum(s, r)
    return rho(s, r) * r / rk


def gain_log(n: int, m: int, r: int, r_floor: int = 2, q_min: float | None = None) -> float:
    """Logarithmic stand-in for Q[r]: ``log_{min(n,m)} r``.

    ``r`` is floored at ``r_floor`` and the result clamped to ``[q_min, 1]``
    (``q_min`` defaults to ``log_{min(n,m)} 2``) so rank one does not yield a
    zero gain and hence a dead adapter.
    """
    k = min(n, m)
    if k < 2:
        raise ValueError(f"min(n, m) must be at least 2, got {k}")
    if r < 1:
        raise ValueError(f"rank must be positive, got {r}")
    if q_min is None:
        q_min = math.log(2) / math.log(k)
    q = math.log(max(r, r_floor)) / math.log(k)
    return float(min(1.0, max(q_min, q)))


def k1_rate(r, m, n, sigma_A, sigma_B) -> float:
    """Linear growth coefficient of nu[W_LoRA]: ``r (m sA^4 + n sB^4)``."""
    return float(r * (m * sigma_A**4 + n * sigma_B**4))


def k2_rate(r, m, n, sigma_A, sigma_B) -> float:
    """Quadratic coefficient ``r m n sA^2 sB^2`` (reported, not gated)."""
    return float(r * m * n * sigma_A**2 * sigma_B**2)


def predict_step_variance(nu_A, nu_B, nu_gradA, nu_gradB, r, alpha, eta) -> float:
    return float(r * alpha**2 * eta**2 * (nu_B * nu_gradA + nu_gradB * nu_A))


@dataclass(frozen=True)
class DynamicsParams:
    sigma_A: float
    sigma_B: float
    sigma_L: float
    eta: float
    m: int
    n: int
    r: int

    def __post_init__(self):
        for name in ("sigma_A", "sigma_B", "sigma_L", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("m", "n", "r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def gamma(self) -> float:
        return self.eta**2 * self.sigma_L**2

    @property
    def gamma_A(self) -> float:
        return self.m * self.gamma

    @property
    def gamma_B(self) -> float:
        return self.n * self.gamma

    @property
    def k1(self) -> float:
        return k1_rate(self.r, self.m, self.n, self.sigma_A, self.sigma_B)

    @property
    def k2(self) -> float:
        return k2_rate(self.r, self.m, self.n, self.sigma_A, self.sigma_B)


def _power_terms(g: float, t: int) -> tuple[float, float]:
    """Return ``(c, s/g)`` with ``c = (l+^t + l-^t)/2``, ``s = (l+^t - l-^t)/2``,
    ``l± = 1 ± g``; ``s/g -> t`` as ``g -> 0``."""
    if g == 0.0:
        return 1.0, float(t)
    if g < 1.0:
        a = t * math.log1p(g)
        b = t * math.log1p(-g)
        c = 1.0 + 0.5 * (math.expm1(a) + math.expm1(b))
        return c, 0.5 * (math.expm1(a) - math.expm1(b)) / g
    lp, lm = (1.0 + g) ** t, (1.0 - g) ** t
    return 0.5 * (lp + lm), 0.5 * (lp - lm) / g


def predict_dynamics(p: DynamicsParams, t: int, mode: str = "closed") -> tuple[float, float, float]:
    """Expected ``(nu[A_t], nu[B_t], nu[W_LoRA,t])``.

    ``closed`` applies the exact power of ``[[1, gB], [gA, 1]]`` to
    ``(sA^2, sB^2)``; ``linearized`` keeps the first order in ``t``.  In both
    modes nu[W_LoRA] is ``k1 g t + k2 g^2 t^2`` with ``g = eta^2 sigma_L^2``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    a0, b0 = p.sigma_A**2, p.sigma_B**2
    gA, gB = p.gamma_A, p.gamma_B
    if mode == "closed":
        c, s_over_g = _power_terms(math.sqrt(gA * gB), t)
        nu_a = c * a0 + gB * s_over_g * b0
        nu_b = gA * s_over_g * a0 + c * b0
    elif mode == "linearized":
        nu_a = a0 + t * gB * b0
        nu_b = b0 + t * gA * a0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    g = p.gamma
    nu_w = p.k1 * g * t + p.k2 * (g * t) ** 2
    return float(nu_a), float(nu_b), float(nu_w)


def iterate_dynamics(p: DynamicsParams, t: int) -> tuple[float, float]:
    """Step the two-state recurrence ``t`` times (reference for the closed form)."""
    a, b = p.sigma_A**2, p.sigma_B**2
    gA, gB = p.gamma_A, p.gamma_B
    for _ in range(t):
        a, b = a + gB * b, b + gA * a
    return a, b


@dataclass
class SpectralReport:
    singular_values: np.ndarray
    effective_rank: int
    nu_w: float
    dims: tuple[int, int]
    rho: dict[int, float] = field(default_factory=dict)
    q: dict[int, float] = field(default_factory=dict)
    q_log: dict[int, float] = field(default_factory=dict)
    beyond_rank: list[int] = field(default_factory=list)

    def ranks(self) -> list[int]:
        return sorted(self.q)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rank", "rho", "q", "q_log"])
        for r in self.ranks():
            writer.writerow([r, repr(self.rho[r]), repr(self.q[r]), repr(self.q_log[r])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "singular_values": [float(x) for x in self.singular_values],
            "nu_w": self.nu_w,
            "effective_rank": self.effective_rank,
            "ranks": [
                {"rank": r, "rho": self.rho[r], "q": self.q[r], "q_log": self.q_log[r],
                 "beyond_rank": r in self.beyond_rank}
                for r in self.ranks()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def spectral_report(w, ranks) -> SpectralReport:
    """Singular spectrum of ``w`` with rho, Q and log-gain at each requested rank.

    Ranks past the effective rank use the zero-padded spectrum and are listed
    in ``beyond_rank``.
    """
    w = np.asarray(w, dtype=np.float64)
    n, m = w.shape
    s = svd(w).S
    rk = effective_rank(s)
    rep = SpectralReport(singular_values=s, effective_rank=rk, nu_w=nu(w), dims=(n, m))
    if rk == 0:
        raise ValueError("zero matrix has no spectral report")
    for r in ranks:
        r = int(r)
        if not 1 <= r <= s.size:
            raise ValueError(f"rank {r} outside [1, {s.size}]")
        rep.rho[r] = rho(s, r)
        rep.q[r] = gain_q(s, r)
        rep.q_log[r] = gain_log(n, m, r) if min(n, m) >= 2 else 1.0
        if r > rk:
            rep.beyond_rank.append(r)
    return rep
