#!/usr/bin/env python3
"""What the varifocal loss actually does to positives and negatives.

Negatives are focally down-weighted by p^gamma (confident background is
almost free; confidently wrong background is expensive). Positives are
weighted by their quality q, and their best response is to predict p = q,
not p = 1: the score head learns to report localisation quality.
"""
import numpy as np

from tinydet import ScoreTarget, focal_loss, varifocal_loss

print("negatives: -0.75 * p^2 * log(1-p)")
print(f"{'p':>6} {'loss':>10}")
for p in (0.01, 0.1, 0.3, 0.5, 0.9):
    print(f"{p:>6.2f} {varifocal_loss([ScoreTarget(p, 0.0)]).item():>10.6f}")

print("\npositives: -q (q log p + (1-q) log(1-p)), minimised at p = q")
grid = np.linspace(0.02, 0.98, 97)
for q in (0.3, 0.6, 0.9):
    losses = [varifocal_loss([ScoreTarget(float(p), q)]).item() for p in grid]
    best = grid[int(np.argmin(losses))]
    print(f"  q={q:.1f}: argmin_p loss = {best:.2f}")

print("\nasymmetry at p=0.5: a q=0.9 positive outweighs a negative")
pos = varifocal_loss([ScoreTarget(0.5, 0.9)]).item()
neg = varifocal_loss([ScoreTarget(0.5, 0.0)]).item()
print(f"  positive {pos:.4f} vs negative {neg:.4f}  (ratio {pos / neg:.1f}x)")

print("\nthe negative branch is exactly an alpha-on-negative focal loss:")
for p in (0.2, 0.5, 0.8):
    v = varifocal_loss([ScoreTarget(p, 0.0)]).item()
    f = focal_loss(p, 0, alpha=0.75, gamma=2.0, alpha_on_negative=True)
    print(f"  p={p:.1f}: varifocal {v:.6f}  focal {f:.6f}  diff {abs(v - f):.1e}")
