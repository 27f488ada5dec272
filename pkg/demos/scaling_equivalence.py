"""alpha can be traded for init scale and learning rate without changing training.

Run alpha = 16 against alpha' = 4 with A0, B0 doubled and SGD rates scaled by
4: the two adapters trace the same alpha * B A to rounding.  Multiplying the
rate by 4 while dropping alpha to 1 does not.
"""
from dataclasses import replace

import numpy as np

from loram.harness import Trainer, prop1_config

steps = 300
cfg = prop1_config("sgd", steps=steps, seed=0)

base = Trainer(cfg)
split = Trainer(cfg).reparameterized(2.0, 2.0)
naive = Trainer(cfg).with_hyperparams(alpha=1.0, eta_scale=4.0)


def gap(a, b):
    return max(np.linalg.norm(x.lora_weight() - y.lora_weight()) / max(np.linalg.norm(x.lora_weight()), 1e-300)
               for x, y in zip(a.layers, b.layers))


print(f"{'step':>6}{'loss':>12}{'split gap':>14}{'naive gap':>14}")
for t in range(1, steps + 1):
    loss = base.train_step()
    split.train_step()
    naive.train_step()
    if t in (1, 10, 50, 100, 200, 300):
        print(f"{t:>6}{loss:>12.5f}{gap(base, split):>14.2e}{gap(base, naive):>14.2e}")

adam = replace(cfg, optimizer="adam", steps=100)
a, b = Trainer(adam), Trainer(adam).reparameterized(2.0, 2.0)
for _ in range(100):
    a.train_step()
    b.train_step()
print(f"\nAdam (epsilon = 0) after 100 steps: relative gap {gap(a, b):.2e}")
