"""A single low-rank adapted linear layer and its optimizer.

The layer computes ``y = W_residual x + alpha * B (A x)`` where ``W_residual``
is frozen and already absorbs ``alpha * B0 A0``.  Inputs are column-major:
``x`` is ``m x batch``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import npyio
from .linalg import LinalgError
from .magnitude import nu

__all__ = [
    "LoRAAdapter",
    "OptimizerState",
    "UpdateRecord",
    "Reparam",
    "decompose_alpha",
    "save_adapter",
    "load_adapter",
]


class UpdateRecord(NamedTuple):
    delta_W: np.ndarray
    nu_delta: float
    nu_A: float
    nu_B: float
    nu_W_lora: float


class LoRAAdapter:
    def __init__(self, W_residual, A, B, alpha: float = 1.0):
        W_residual = np.array(W_residual, dtype=np.float64)
        A = np.array(A, dtype=np.float64)
        B = np.array(B, dtype=np.float64)
        n, m = W_residual.shape
        r = A.shape[0]
        if A.shape != (r, m) or B.shape != (n, r):
            raise LinalgError(f"inconsistent shapes W{W_residual.shape}, A{A.shape}, B{B.shape}")
        W_residual.setflags(write=False)
        self.W_residual = W_residual
        self.A = A
        self.B = B
        self.alpha = float(alpha)
        self._A0 = A.copy()
        self._B0 = B.copy()
        self._BA0 = B @ A
        self._BA = self._BA0.copy()

    @classmethod
    def from_init(cls, res) -> "LoRAAdapter":
        return cls(res.W_residual, res.A, res.B, res.alpha)

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.W_residual.shape

    def effective_weight(self) -> np.ndarray:
        return self.W_residual + self.alpha * (self.B @ self.A)

    def lora_weight(self) -> np.ndarray:
        """Cumulative adaptation ``alpha (B A - B0 A0)``; zero at construction."""
        if self._BA is None:
            self._BA = self.B @ self.A
        return self.alpha * (self._BA - self._BA0)

    def nu_lora(self) -> float:
        """``nu`` of :meth:`lora_weight` from r-sized Gram matrices."""
        return _nu_product_diff(self.B, self.A, self._B0, self._A0, self.alpha)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.A.shape[1]:
            raise LinalgError(f"input shape {x.shape} does not match layer input dim {self.A.shape[1]}")
        return self.W_residual @ x + self.alpha * (self.B @ (self.A @ x))

    def backward_input(self, delta) -> np.ndarray:
        """Gradient w.r.t. the layer input given the output gradient ``delta``."""
        return self.W_residual.T @ delta + self.alpha * (self.A.T @ (self.B.T @ delta))

    def gradients(self, grad_W) -> tuple[np.ndarray, np.ndarray]:
        """Chain an n x m weight gradient through the factorization."""
        grad_W = np.asarray(grad_W, dtype=np.float64)
        if grad_W.shape != self.W_residual.shape:
            raise LinalgError(f"grad_W shape {grad_W.shape} != layer shape {self.W_residual.shape}")
        return self.alpha * (self.B.T @ grad_W), self.alpha * (grad_W @ self.A.T)

    def gradients_outer(self, delta, x) -> tuple[np.ndarray, np.ndarray]:
        """Same as :meth:`gradients` for ``grad_W = delta @ x.T``, without forming it."""
        return self.alpha * ((self.B.T @ delta) @ x.T), self.alpha * (delta @ (self.A @ x).T)

    def step_fast(self, opt: "OptimizerState", grad_A, grad_B) -> float:
        """Apply an update and return only ``nu`` of the weight change."""
        B_old, A_old = self.B.copy(), self.A.copy()
        self._apply(opt, grad_A, grad_B)
        self._BA = None
        return _nu_product_diff(self.B, self.A, B_old, A_old, self.alpha)

    def _apply(self, opt, grad_A, grad_B):
        if grad_A.shape != self.A.shape or grad_B.shape != self.B.shape:
            raise LinalgError("gradient shapes do not match parameters")
        if not (np.all(np.isfinite(grad_A)) and np.all(np.isfinite(grad_B))):
            raise FloatingPointError("non-finite gradient")
        dA, dB = opt.updates(grad_A, grad_B)
        self.A -= dA
        self.B -= dB

    def step(self, opt: "OptimizerState", grad_A, grad_B) -> UpdateRecord:
        if self._BA is None:
            self._BA = self.B @ self.A
        self._apply(opt, grad_A, grad_B)
        BA = self.B @ self.A
        delta = self.alpha * (BA - self._BA)
        self._BA = BA
        return UpdateRecord(
            delta_W=delta,
            nu_delta=nu(delta),
            nu_A=nu(self.A),
            nu_B=nu(self.B),
            nu_W_lora=nu(self.lora_weight()),
        )


def _nu_product_diff(B1, A1, B0, A0, alpha) -> float:
    """``nu[alpha (B1 A1 - B0 A0)]`` via ``[B1 - B0, B0] [A1; A1 - A0]``,
    which avoids cancelling two large products."""
    X = np.hstack([B1 - B0, B0])
    Y = np.vstack([A1, A1 - A0])
    val = float(np.sum((X.T @ X) * (Y @ Y.T)))
    return alpha * alpha * max(val, 0.0) / (B1.shape[0] * A1.shape[1])


@dataclass
class OptimizerState:
    """SGD or Adam with separate learning rates for A and B.

    Adam divides by ``sqrt(v_hat) + epsilon``; with ``epsilon = 0`` an entry
    whose moments are both zero gets a zero update.
    """

    kind: str = "sgd"
    eta_A: float = 1e-3
    eta_B: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    moments: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def updates(self, grad_A, grad_B) -> tuple[np.ndarray, np.ndarray]:
        self.step += 1
        if self.kind == "sgd":
            return self.eta_A * grad_A, self.eta_B * grad_B
        return self._adam("A", grad_A, self.eta_A), self._adam("B", grad_B, self.eta_B)

    def _adam(self, key, g, eta):
        if key not in self.moments:
            self.moments[key] = (np.zeros_like(g), np.zeros_like(g))
        m, v = self.moments[key]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        m_hat = m / (1.0 - self.beta1**self.step)
        denom = np.sqrt(v / (1.0 - self.beta2**self.step)) + self.epsilon
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(denom > 0, m_hat / denom, 0.0)
        return eta * ratio


class Reparam(NamedTuple):
    alpha_prime: float
    scale_A: float
    scale_B: float
    eta_A: float
    eta_B: float


def decompose_alpha(alpha, alpha_A, alpha_B, opt_kind: str, eta_A: float = 1.0, eta_B: Optional[float] = None) -> Reparam:
    """Split ``alpha = alpha' alpha_A alpha_B`` with matching init scales and rates.

    The rescaled run uses ``A0 * alpha_A``, ``B0 * alpha_B`` and learning rates
    multiplied by ``alpha_A**2, alpha_B**2`` (SGD) or ``alpha_A, alpha_B``
    (Adam); it then follows the same trajectory of ``alpha B A``.
    """
    eta_B = eta_A if eta_B is None else eta_B
    for name, val in (("alpha", alpha), ("alpha_A", alpha_A), ("alpha_B", alpha_B)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    if opt_kind == "sgd":
        pa, pb = alpha_A**2, alpha_B**2
    elif opt_kind == "adam":
        pa, pb = alpha_A, alpha_B
    else:
        raise ValueError(f"unknown optimizer {opt_kind!r}")
    return Reparam(alpha / (alpha_A * alpha_B), float(alpha_A), float(alpha_B), pa * eta_A, pb * eta_B)


def save_adapter(out_dir, ad: LoRAAdapter, opt: Optional[OptimizerState] = None, meta: Optional[dict] = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    npyio.write_npy(os.path.join(out_dir, "A.npy"), ad.A)
    npyio.write_npy(os.path.join(out_dir, "B.npy"), ad.B)
    npyio.write_npy(os.path.join(out_dir, "W_residual.npy"), ad.W_residual)
    info = {"format": 1, "alpha": ad.alpha, "rank": ad.rank, "dims": list(ad.shape)}
    if opt is not None:
        info["optimizer"] = {
            "kind": opt.kind, "eta_A": opt.eta_A, "eta_B": opt.eta_B, "beta1": opt.beta1,
            "beta2": opt.beta2, "epsilon": opt.epsilon, "step": opt.step,
        }
        for key, (m, v) in sorted(opt.moments.items()):
            npyio.write_npy(os.path.join(out_dir, f"moment1_{key}.npy"), m)
            npyio.write_npy(os.path.join(out_dir, f"moment2_{key}.npy"), v)
    if meta:
        info.update(meta)
    with open(os.path.join(out_dir, "meta.json"), "w", newline="\n") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_adapter(out_dir) -> tuple[LoRAAdapter, Optional[OptimizerState]]:
    with open(os.path.join(out_dir, "meta.json")) as fh:
        info = json.load(fh)
    ad = LoRAAdapter(
        npyio.read_npy(os.path.join(out_dir, "W_residual.npy")),
        npyio.read_npy(os.path.join(out_dir, "A.npy")),
        npyio.read_npy(os.path.join(out_dir, "B.npy")),
        info["alpha"],
    )
    opt = None
    if "optimizer" in info:
        o = info["optimizer"]
        opt = OptimizerState(o["kind"], o["eta_A"], o["eta_B"], o["beta1"], o["beta2"], o["epsilon"], step=o["step"])
        for key in ("A", "B"):
            p1 = os.path.join(out_dir, f"moment1_{key}.npy")
            if os.path.exists(p1):
                opt.moments[key] = (npyio.read_npy(p1), npyio.read_npy(os.path.join(out_dir, f"moment2_{key}.npy")))
    return ad, opt
