"""Compare initial adapter magnitudes across schemes on one weight.

Every scheme absorbs its starting product into the frozen residual, so the
layer output is unchanged at step zero.  What differs is how large B0 A0 is,
which sets how fast the adapter can move once training starts.
"""
import numpy as np

from loram.init import InitSpec, init_loram_tracking, init_pissa, initialize
from loram.magnitude import gain_log, nu, spectral_report
from loram.rng import Rng, gaussian_matrix

n, m, r = 256, 192, 16

# a weight with a decaying spectrum, closer to a trained layer than pure noise
rng = Rng(0)
U = np.linalg.qr(gaussian_matrix(rng, n, m))[0]
V = np.linalg.qr(gaussian_matrix(rng, m, m))[0]
s = 1.0 / np.sqrt(1.0 + np.arange(m))
W = (U * s) @ V.T

rep = spectral_report(W, [r])
print(f"nu[W] = {nu(W):.4g}, effective rank {rep.effective_rank}")
print(f"exact Q[{r}] = {rep.q[r]:.4f}, log stand-in = {gain_log(n, m, r):.4f}\n")

print(f"{'scheme':<16}{'nu[B0 A0] / nu[W]':>20}{'reconstruction':>18}")
for scheme in ("noise_zeros", "pissa", "milora", "olora", "loram"):
    res = initialize(W, InitSpec(scheme=scheme, rank=r))
    err = np.linalg.norm(res.effective_weight() - W) / np.linalg.norm(W)
    print(f"{scheme:<16}{res.nu_BA / nu(W):>20.4f}{err:>18.1e}")

# the same deterministic DST bases, but matched to PiSSA's starting magnitude
ref = init_pissa(W, InitSpec(scheme="pissa", rank=r))
tr = init_loram_tracking(W, InitSpec(scheme="loram_tracking", rank=r), ref.A, ref.B)
print(f"{'loram_tracking':<16}{tr.nu_BA / nu(W):>20.4f}")

# with the exact gain, nu[B0 A0] = (sum of top-r s)^2 / (r n m), which by Jensen
# sits below PiSSA's sum of top-r s^2 / (n m); equal only for a flat top r
ex = initialize(W, InitSpec(scheme="loram", rank=r, gain_mode="exact_spectral"))
top = s[:r]
print(f"\nloram with exact Q: {ex.nu_BA / nu(W):.4f}  (pissa: {ref.nu_BA / nu(W):.4f})")
print(f"check: {top.sum() ** 2 / r / np.sum(s ** 2):.4f} vs {np.sum(top ** 2) / np.sum(s ** 2):.4f}")
