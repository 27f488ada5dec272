"""How well does log_k(r) track the exact spectral gain Q[r]?

Q[r] measures how much of a weight's energy a top-r SVD init captures,
normalized by rank.  A flat spectrum gives r/R; concentrated spectra push Q
toward 1 at small r.  The log stand-in needs no decomposition at all.
"""
import numpy as np

from loram.magnitude import gain_log, gain_q
from loram.linalg import svd
from loram.rng import Rng, gaussian_matrix

k = 128
ranks = (1, 2, 4, 8, 16, 32, 64, 128)
rng = Rng(3)

spectra = {
    "flat": np.ones(k),
    "gaussian": svd(gaussian_matrix(rng, k, k)).S,
    "power 1/2": 1.0 / np.sqrt(1.0 + np.arange(k)),
    "power 1": 1.0 / (1.0 + np.arange(k)),
}

print(f"{'r':>4}{'log':>9}" + "".join(f"{name:>12}" for name in spectra))
for r in ranks:
    row = f"{r:>4}{gain_log(k, k, r):>9.3f}"
    row += "".join(f"{gain_q(s, r):>12.3f}" for s in spectra.values())
    print(row)
