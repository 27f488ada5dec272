"""Dense matrix kernel: products, one-sided Jacobi SVD, Householder QR, DST bases.

Matrices are plain 2-D ``float64`` numpy arrays.  Factorizations here are
written out explicitly (rather than delegating to LAPACK) so that their
output, including signs, is fixed by a documented convention and is
bit-reproducible for a given input.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "LinalgError",
    "SvdError",
    "SvdResult",
    "as_matrix",
    "matmul",
    "svd",
    "qr",
    "dst_basis",
    "random_orthogonal",
]

SVD_MAX_SWEEPS = 64
_SIGN_EPS = 1e-12


class LinalgError(ValueError):
    """Shape or domain error raised by the matrix kernel."""


class SvdError(LinalgError):
    """Raised when the Jacobi iteration does not converge within the sweep cap."""


class SvdResult(NamedTuple):
    U: np.ndarray  # n x k, orthonormal columns
    S: np.ndarray  # k, descending
    V: np.ndarray  # m x k, orthonormal columns


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise LinalgError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise LinalgError(f"{name} must have positive dimensions, got {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise LinalgError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def _round_robin_layout(k: int) -> np.ndarray:
    """Column gather taking one round-robin round to the next.

    Columns are kept laid out so that round pairs are ``(j, j + k/2)``; the
    circle method moves every player except the first one seat per round, and
    after ``k - 1`` rounds the layout is back where it started.
    """
    h = k // 2
    players = list(range(k))

    def layout(p):
        return p[:h] + p[::-1][:h]

    cur = layout(players)
    nxt = layout([players[0], players[-1]] + players[1:-1])
    where = {pl: i for i, pl in enumerate(cur)}
    return np.array([where[pl] for pl in nxt], dtype=np.intp)


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``keep`` with an orthonormal
    completion, built by Gram-Schmidt against the standard basis."""
    n, k = u.shape
    out = u.copy()
    basis = [out[:, j] for j in range(k) if keep[j]]
    e = 0
    for j in range(k):
        if keep[j]:
            continue
        while True:
            if e >= n:
                raise SvdError("cannot complete orthonormal basis")
            v = np.zeros(n)
            v[e] = 1.0
            e += 1
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                v /= norm
                break
        out[:, j] = v
        basis.append(v)
    return out


def _apply_sign_convention(u: np.ndarray, v: np.ndarray) -> None:
    for j in range(u.shape[1]):
        col = u[:, j]
        idx = np.flatnonzero(np.abs(col) > _SIGN_EPS)
        if idx.size and col[idx[0]] < 0:
            u[:, j] = -col
            v[:, j] = -v[:, j]


def _jacobi_tall(w: np.ndarray, max_sweeps: int) -> SvdResult:
    n, m = w.shape
    k = m + (m % 2)
    h = k // 2
    # row j of xt is column j of [W V; V]; odd m gets a zero pad row
    xt = np.zeros((k, n + m))
    xt[:m, :n] = w.T
    xt[:m, n:] = np.eye(m)
    perm = _round_robin_layout(k) if k > 1 else np.zeros(1, dtype=np.intp)
    rel_tol = max(n, m) * np.finfo(np.float64).eps
    zero_tol = 1e-12 * max(n, m)
    for _sweep in range(max_sweeps):
        floor = rel_tol * np.sqrt(np.einsum("ij,ij->i", xt[:, :n], xt[:, :n]).max())
        rotated = False
        for _ in range(k - 1):
            top, bot = xt[:h, :n], xt[h:, :n]
            alpha = np.einsum("ij,ij->i", top, top)
            beta = np.einsum("ij,ij->i", bot, bot)
            gamma = np.einsum("ij,ij->i", top, bot)
            active = (
                (np.abs(gamma) > rel_tol * np.sqrt(alpha * beta))
                & (alpha > floor * floor)
                & (beta > floor * floor)
            )
            if active.any():
                rotated = True
                g = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)[:, None]
                s = np.where(active, c[:, 0] * t, 0.0)[:, None]
                p, q = xt[:h].copy(), xt[h:]
                xt[:h] = c * p - s * q
                xt[h:] = s * p + c * q
            xt = xt[perm]
        if not rotated:
            break
    else:
        raise SvdError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")

    x = xt.T
    a, v = x[:n, :m], x[n:, :m]
    sv = np.sqrt(np.einsum("ij,ij->j", a, a))
    order = np.argsort(-sv, kind="stable")
    sv, a, v = sv[order], a[:, order], v[:, order].copy()
    keep = sv > (zero_tol * sv[0] if sv.size else 0.0)
    keep &= sv > 0
    sv = np.where(keep, sv, 0.0)
    u = np.zeros((n, m))
    u[:, keep] = a[:, keep] / sv[keep]
    if not keep.all():
        u = _complete_basis(u, keep)
    _apply_sign_convention(u, v)
    return SvdResult(u, sv, v)


def svd(w, max_sweeps: int = SVD_MAX_SWEEPS) -> SvdResult:
    """Thin SVD ``w = U diag(S) V^T`` by one-sided Jacobi.

    Column pairs are rotated in round-robin order until every pair satisfies
    ``|a_p . a_q| <= max(n, m) * eps * |a_p| |a_q|``.  Columns whose norm is
    at most ``1e-12 * max(n, m) * s_max`` are numerically zero: they are not
    rotated, their singular value is reported as 0 and the matching U columns
    are completed to an orthonormal set.  Singular values come back descending; each column of U has
    its first entry of magnitude above 1e-12 non-negative, with V signed to
    match.  Raises :class:`SvdError` after ``max_sweeps`` sweeps.
    """
    w = as_matrix(w, "w")
    if not np.all(np.isfinite(w)):
        raise LinalgError("svd input contains non-finite entries")
    n, m = w.shape
    if n >= m:
        return _jacobi_tall(w, max_sweeps)
    # wide input: factor the transpose, then re-apply the sign convention to U
    vt = _jacobi_tall(w.T.copy(), max_sweeps)
    u, v = vt.V.copy(), vt.U.copy()
    _apply_sign_convention(u, v)
    return SvdResult(u, vt.S, v)


def qr(w) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR with ``k = min(n, m)``: Q is n x k, R is k x m.

    R's diagonal is made non-negative.  Rank-deficient columns are allowed and
    give a zero on R's diagonal.
    """
    w = as_matrix(w, "w")
    if not np.all(np.isfinite(w)):
        raise LinalgError("qr input contains non-finite entries")
    n, m = w.shape
    k = min(n, m)
    r = w.copy()
    vs = []
    for j in range(k):
        x = r[j:, j]
        normx = np.linalg.norm(x)
        v = x.copy()
        if normx == 0.0:
            vs.append(None)
            continue
        # reflect x onto -sign(x0)|x| e1 for stability
        sign = 1.0 if x[0] >= 0 else -1.0
        v[0] += sign * normx
        v /= np.linalg.norm(v)
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        r[j + 1:, j] = 0.0
        vs.append(v)
    q = np.eye(n, k)
    for j in reversed(range(k)):
        v = vs[j]
        if v is None:
            continue
        q[j:, :] -= 2.0 * np.outer(v, v @ q[j:, :])
    r = r[:k, :]
    flip = np.diag(r) < 0
    r[flip, :] *= -1.0
    q[:, flip] *= -1.0
    r[np.tril_indices(k, -1, m)] = 0.0
    return q, r


def dst_basis(dim: int, rank: int) -> np.ndarray:
    """First ``rank`` columns of the orthonormal DST-I matrix of size ``dim``.

    Entry (i, j), zero-based, is ``sqrt(2/(dim+1)) * sin((i+1)(j+1) pi / (dim+1))``.
    """
    dim, rank = int(dim), int(rank)
    if dim < 1 or rank < 1:
        raise LinalgError(f"dim and rank must be positive, got dim={dim}, rank={rank}")
    if rank > dim:
        raise LinalgError(f"rank {rank} exceeds dim {dim}")
    i = np.arange(1, dim + 1, dtype=np.int64)[:, None]
    j = np.arange(1, rank + 1, dtype=np.int64)[None, :]
    # reduce (i*j) mod 2(dim+1) in exact integers before scaling by pi
    phase = (i * j) % (2 * (dim + 1))
    return np.sqrt(2.0 / (dim + 1)) * np.sin(phase * np.pi / (dim + 1))


def random_orthogonal(rng, dim: int, rank: int) -> np.ndarray:
    """``dim x rank`` matrix with orthonormal columns: Q of a Gaussian draw."""
    from .rng import gaussian_matrix

    if rank > dim:
        raise LinalgError(f"rank {rank} exceeds dim {dim}")
    q, _ = qr(gaussian_matrix(rng, dim, rank, 1.0))
    return q
