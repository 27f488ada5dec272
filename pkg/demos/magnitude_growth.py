"""Update magnitude of a rank-25 adapter against a fully trainable layer.

Trains the same 5-layer tanh MLP twice on one task, once with LoRA factors
and once with every weight trainable, logs nu[W - W0] per layer, and writes
both trajectories plus an SVG chart to ./magnitude_growth/.

    python demos/magnitude_growth.py [steps]
"""
import os
import sys

import numpy as np

from loram.harness import FIG2B_TASK, fig2b_config, run_training
from loram.magnitude import k1_rate
from loram.plot import render_svg

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400
out = "magnitude_growth"
os.makedirs(out, exist_ok=True)

logs = {}
for mode in ("lora", "linear"):
    logs[mode] = run_training(fig2b_config(1.0, steps=steps, mode=mode), FIG2B_TASK)
    with open(os.path.join(out, f"{mode}.csv"), "w", newline="\n") as fh:
        fh.write(logs[mode].to_csv())

t = np.arange(steps + 1)
lora = logs["lora"].series("nu_W").mean(axis=1)
ctrl = logs["linear"].series("nu_W").mean(axis=1)
for step in sorted({1, steps // 10, steps // 4, steps // 2, steps}):
    print(f"step {step:>5}: lora {lora[step]:.3e}  trainable {ctrl[step]:.3e}  ratio {lora[step] / ctrl[step]:.3f}")

nuA = logs["lora"].series("nu_A")
print(f"\nmax drift of nu[A] over the run: {np.max(np.abs(nuA[-1] / nuA[0] - 1)):.3%}")
print(f"loss {logs['lora'].loss[0]:.4f} -> {logs['lora'].loss[-1]:.4f}")

# terminal magnitude grows with the init scale through k1
for scale in (1, 2, 4):
    lg = run_training(fig2b_config(scale, steps=steps), FIG2B_TASK)
    print(f"scale x{scale}: k1 = {k1_rate(25, 400, 400, scale / 20, scale / 20):.4f}, "
          f"terminal nu[W_lora] = {np.mean(lg.nu_W[-1]):.3e}")

svg = render_svg(list(t[1:]), {"LoRA r=25": list(lora[1:]), "trainable": list(ctrl[1:])}, "step", logy=True)
with open(os.path.join(out, "nu_w.svg"), "w") as fh:
    fh.write(svg)
print(f"\nwrote {out}/lora.csv, {out}/linear.csv, {out}/nu_w.svg")
