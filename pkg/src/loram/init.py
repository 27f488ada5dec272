"""Adapter initialization schemes.

Every scheme returns an :class:`InitResult` whose frozen residual absorbs the
initial product, ``W_residual + alpha * B @ A == W``, so the adapted layer
computes exactly ``W x`` at step zero.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import npyio
from .linalg import as_matrix, dst_basis, qr, random_orthogonal, svd
from .magnitude import effective_rank, gain_log, gain_q, nu
from .rng import Rng, gaussian_matrix

__all__ = [
    "SCHEMES",
    "BASES",
    "DegenerateInputError",
    "InitSpec",
    "InitResult",
    "make_basis",
    "init_noise_zeros",
    "init_pissa",
    "init_milora",
    "init_olora",
    "init_loram",
    "init_loram_tracking",
    "init_lora_ga",
    "initialize",
    "save_init",
    "load_init",
]

SCHEMES = ("noise_zeros", "pissa", "milora", "olora", "loram", "loram_tracking", "lora_ga")
BASES = ("dst", "random_orthogonal", "gaussian")
META_FORMAT = 1


class DegenerateInputError(ValueError):
    """Input for which a scheme is mathematically undefined (e.g. zero weight)."""


@dataclass(frozen=True)
class InitSpec:
    """Declarative description of an initialization.

    ``gain_mode`` is ``"log"``, ``"exact_spectral"`` or a float giving Q
    directly.  ``sigma_noise`` defaults to ``1/sqrt(m)``; ``sigma_b`` (default
    0) makes ``noise_zeros`` draw B from N(0, sigma_b^2) as well.
    """

    scheme: str = "noise_zeros"
    rank: int = 8
    alpha: float = 1.0
    gain_mode: Union[str, float] = "log"
    basis: str = "dst"
    seed: int = 0
    sigma_noise: Optional[float] = None
    sigma_b: float = 0.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}; expected one of {BASES}")
        if int(self.rank) < 1:
            raise ValueError(f"rank must be positive, got {self.rank}")
        if isinstance(self.gain_mode, str):
            if self.gain_mode not in ("log", "exact_spectral"):
                raise ValueError(f"unknown gain_mode {self.gain_mode!r}")
        elif not float(self.gain_mode) >= 0:
            raise ValueError(f"fixed gain must be non-negative, got {self.gain_mode}")

    def check_rank(self, n: int, m: int) -> None:
        if self.rank > min(n, m):
            raise ValueError(f"rank {self.rank} exceeds min(n, m) = min({n}, {m}) = {min(n, m)}")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "rank": self.rank,
            "alpha": self.alpha,
            "gain_mode": self.gain_mode,
            "basis": self.basis,
            "seed": self.seed,
            "sigma_noise": self.sigma_noise,
            "sigma_b": self.sigma_b,
        }


@dataclass
class InitResult:
    A: np.ndarray
    B: np.ndarray
    W_residual: Optional[np.ndarray]
    alpha: float
    nu_BA: float
    beta: Optional[float] = None
    q_used: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    def effective_weight(self) -> np.ndarray:
        return self.W_residual + self.alpha * (self.B @ self.A)


def _result(w, A, B, spec, **extra) -> InitResult:
    BA = B @ A
    residual = None if w is None else w - spec.alpha * BA
    res = InitResult(A=A, B=B, W_residual=residual, alpha=float(spec.alpha), nu_BA=nu(BA), **extra)
    n, m = B.shape[0], A.shape[1]
    res.meta = {
        "format": META_FORMAT,
        **spec.to_dict(),
        "beta": res.beta,
        "q_used": res.q_used,
        "nu_w": None if w is None else nu(w),
        "nu_BA": res.nu_BA,
        "dims": [n, m],
    }
    return res


def make_basis(kind: str, dim: int, rank: int, rng: Optional[Rng] = None) -> np.ndarray:
    """``dim x rank`` basis: DST columns, Q of a Gaussian, or N(0, 1/dim) entries."""
    if kind == "dst":
        return dst_basis(dim, rank)
    if rng is None:
        raise ValueError(f"basis {kind!r} needs an rng")
    if kind == "random_orthogonal":
        return random_orthogonal(rng, dim, rank)
    if kind == "gaussian":
        return gaussian_matrix(rng, dim, rank, 1.0 / np.sqrt(dim))
    raise ValueError(f"unknown basis {kind!r}")


def init_noise_zeros(w, spec: InitSpec, rng: Optional[Rng] = None) -> InitResult:
    w = as_matrix(w, "w")
    n, m = w.shape
    spec.check_rank(n, m)
    rng = Rng(spec.seed) if rng is None else rng
    sigma = spec.sigma_noise if spec.sigma_noise is not None else 1.0 / np.sqrt(m)
    A = gaussian_matrix(rng, spec.rank, m, sigma)
    B = gaussian_matrix(rng, n, spec.rank, spec.sigma_b) if spec.sigma_b else np.zeros((n, spec.rank))
    return _result(w, A, B, spec)


def _spectral(w, spec, trailing=False):
    w = as_matrix(w, "w")
    n, m = w.shape
    spec.check_rank(n, m)
    U, S, V = svd(w)
    r = spec.rank
    sl = slice(S.size - r, S.size) if trailing else slice(0, r)
    root = np.sqrt(S[sl])
    A = root[:, None] * V[:, sl].T
    B = U[:, sl] * root[None, :]
    return _result(w, A, B, spec)


def init_pissa(w, spec: InitSpec) -> InitResult:
    """Top-r singular triplets with sqrt(S) split across A and B."""
    return _spectral(w, spec)


def init_milora(w, spec: InitSpec) -> InitResult:
    """Trailing-r singular triplets, otherwise as :func:`init_pissa`."""
    return _spectral(w, spec, trailing=True)


def init_olora(w, spec: InitSpec) -> InitResult:
    w = as_matrix(w, "w")
    n, m = w.shape
    spec.check_rank(n, m)
    Q, R = qr(w)
    return _result(w, R[: spec.rank, :].copy(), Q[:, : spec.rank].copy(), spec)


def _bases(spec, n, m, rng):
    if spec.basis == "dst":
        return dst_basis(n, spec.rank), dst_basis(m, spec.rank)
    rng = Rng(spec.seed) if rng is None else rng
    return make_basis(spec.basis, n, spec.rank, rng), make_basis(spec.basis, m, spec.rank, rng)


def _resolve_gain(w, spec) -> float:
    n, m = w.shape
    if spec.gain_mode == "log":
        return gain_log(n, m, spec.rank)
    if spec.gain_mode == "exact_spectral":
        s = svd(w).S
        if spec.rank > effective_rank(s):
            raise DegenerateInputError(
                f"rank {spec.rank} exceeds effective rank {effective_rank(s)} for exact spectral gain"
            )
        return gain_q(s, spec.rank)
    return float(spec.gain_mode)


def init_loram(w, spec: InitSpec, rng: Optional[Rng] = None) -> InitResult:
    """Scaled-basis initialization: ``B = beta Phi_n``, ``A = beta Phi_m^T``.

    ``beta = (Q nu[W] / nu[Phi_n Phi_m^T]) ** 0.25`` so that
    ``nu[B A] = Q nu[W]``.  No decomposition of W is needed unless
    ``gain_mode == "exact_spectral"``.
    """
    w = as_matrix(w, "w")
    n, m = w.shape
    spec.check_rank(n, m)
    nu_w = nu(w)
    if nu_w == 0:
        raise DegenerateInputError("weight has zero magnitude; beta is undefined")
    q = _resolve_gain(w, spec)
    phi_n, phi_m = _bases(spec, n, m, rng)
    beta = (q * nu_w / nu(phi_n @ phi_m.T)) ** 0.25
    return _result(w, beta * phi_m.T, beta * phi_n, spec, beta=float(beta), q_used=float(q))


def init_loram_tracking(w, spec: InitSpec, a_ref, b_ref, rng: Optional[Rng] = None) -> InitResult:
    """Scaled-basis initialization whose ``nu[B A]`` equals that of a reference pair."""
    w = as_matrix(w, "w")
    n, m = w.shape
    spec.check_rank(n, m)
    a_ref, b_ref = as_matrix(a_ref, "a_ref"), as_matrix(b_ref, "b_ref")
    if a_ref.shape != (spec.rank, m) or b_ref.shape != (n, spec.rank):
        raise ValueError(
            f"reference shapes A{a_ref.shape}, B{b_ref.shape} incompatible with r={spec.rank}, n={n}, m={m}"
        )
    nu_ref = nu(b_ref @ a_ref)
    if nu_ref == 0:
        raise DegenerateInputError("reference product has zero magnitude")
    nu_w = nu(w)
    phi_n, phi_m = _bases(spec, n, m, rng)
    beta = (nu_ref / nu(phi_n @ phi_m.T)) ** 0.25
    q = nu_ref / nu_w if nu_w > 0 else None
    return _result(w, beta * phi_m.T, beta * phi_n, spec, beta=float(beta), q_used=q)


def init_lora_ga(grad, spec: InitSpec) -> InitResult:
    """Gradient-aligned form: ``A = V_r^T``, ``B = U_r`` of the gradient's SVD.

    No residual is produced; the caller absorbs ``alpha * B @ A`` into its weight.
    """
    grad = as_matrix(grad, "grad")
    n, m = grad.shape
    spec.check_rank(n, m)
    U, _, V = svd(grad)
    return _result(None, V[:, : spec.rank].T.copy(), U[:, : spec.rank].copy(), spec)


def initialize(w, spec: InitSpec, rng: Optional[Rng] = None) -> InitResult:
    """Dispatch on ``spec.scheme`` for the schemes that need only the weight."""
    if spec.scheme == "noise_zeros":
        return init_noise_zeros(w, spec, rng)
    if spec.scheme == "pissa":
        return init_pissa(w, spec)
    if spec.scheme == "milora":
        return init_milora(w, spec)
    if spec.scheme == "olora":
        return init_olora(w, spec)
    if spec.scheme == "loram":
        return init_loram(w, spec, rng)
    raise ValueError(f"scheme {spec.scheme!r} needs extra inputs; call its function directly")


def save_init(res: InitResult, out_dir, extra_meta: Optional[dict] = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    npyio.write_npy(os.path.join(out_dir, "A.npy"), res.A)
    npyio.write_npy(os.path.join(out_dir, "B.npy"), res.B)
    if res.W_residual is not None:
        npyio.write_npy(os.path.join(out_dir, "W_residual.npy"), res.W_residual)
    meta = dict(res.meta)
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(out_dir, "meta.json"), "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_init(out_dir) -> InitResult:
    with open(os.path.join(out_dir, "meta.json")) as fh:
        meta = json.load(fh)
    A = npyio.read_npy(os.path.join(out_dir, "A.npy"))
    B = npyio.read_npy(os.path.join(out_dir, "B.npy"))
    path = os.path.join(out_dir, "W_residual.npy")
    W_res = npyio.read_npy(path) if os.path.exists(path) else None
    return InitResult(
        A=A, B=B, W_residual=W_res, alpha=float(meta["alpha"]), nu_BA=float(meta["nu_BA"]),
        beta=meta.get("beta"), q_used=meta.get("q_used"), meta=meta,
    )
