#!/usr/bin/env python3
"""Train the two-branch forecaster on a synthetic periodic signal.

A noiseless 24-hour sinusoid is the friendliest possible input: stacked
into periods, every grid column is (nearly) constant, so the long branch
only has to copy columns forward.  We train the full model and the two
single-branch ablations, then repeat on a phase-drifting variant where
the within-period pattern slowly slides - that is where the column-wise
branch shines and the global-summary branch cannot keep up.
"""

import numpy as np

from tpgn import TpgnParams, VARIANTS
from tpgn.data import SplitSpec, split_and_window, synthetic_sinusoid
from tpgn.training import TrainConfig, evaluate, fit


def run(variant: str, drift: float) -> float:
    series = synthetic_sinusoid(2200, period=24.0, phase_drift=drift)
    train_w, val_w, test_w = split_and_window(series, SplitSpec(l_h=168, l_f=168))
    cfg = TrainConfig(l_h=168, l_f=168, period=24, d_m=32, norm=0,
                      max_epochs=6, patience=6, variant=variant)
    params = TpgnParams.init(168, 168, 24, 4, 32,
                             np.random.default_rng(cfg.seed), VARIANTS[variant])
    ckpt, log = fit(params, train_w, val_w, cfg)
    mse = evaluate(ckpt, test_w)["mse"]
    print(f"  {variant:>6} drift={drift:<5} epochs={len(log)} "
          f"best val {ckpt.best_val_loss:.2e}  test MSE {mse:.2e}")
    return mse


print("pure 24h sinusoid (168 history -> 168 horizon, d_m=32):")
full = run("full", 0.0)
long_only = run("long", 0.0)
short_only = run("short", 0.0)

print("\nphase-drifting sinusoid (0.01 rad/hour):")
full_d = run("full", 0.01)
long_d = run("long", 0.01)
short_d = run("short", 0.01)

print(f"\non the drifting signal the period-summary branch alone is "
      f"{short_d / long_d:.0f}x worse than the column-wise branch alone:")
print("a global per-period summary predicts the same value for every phase, "
      "so it cannot track a pattern that moves within the period.")
