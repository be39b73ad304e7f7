"""
Competitive Barlow Twins
========================

Two encoders look at the same batch of graphs. Their standardised embeddings
give a cross-correlation matrix C. Both players want diag(C) = 1; the
off-diagonal mass is split so that each player is charged for one triangle
and credited for the other.
"""

import numpy as np

from graphac.losses import (LossConfig, barlow_twins_loss, competitive_bt_losses, cross_correlation,
                            graphac_losses, invariance_term, triangle_sums)

rng = np.random.default_rng(1)
shared = rng.normal(size=(128, 6))
h_a = shared + 0.3 * rng.normal(size=shared.shape)
h_b = shared + 0.3 * rng.normal(size=shared.shape)

c = cross_correlation(h_a, h_b)
upper, lower = triangle_sums(c)
print("diag(C):", np.round(np.diag(c.data), 3))
print(f"invariance {invariance_term(c).item():.4f}, upper {upper.item():.4f}, lower {lower.item():.4f}")

la, lb = competitive_bt_losses(c, lam=5e-3, mu=1.0)
print(f"L_A = {la.item():.5f}  L_B = {lb.item():.5f}  plain BT = {barlow_twins_loss(c).item():.5f}")

# with mu = 1 the triangle terms cancel in the sum
print("L_A + L_B - 2 inv =", la.item() + lb.item() - 2 * invariance_term(c).item())

# swapping the inputs transposes C, which swaps the two seats
_, lb_swapped = competitive_bt_losses(cross_correlation(h_b, h_a), 5e-3, 1.0)
print("L_A(H_A, H_B) - L_B(H_B, H_A) =", la.item() - lb_swapped.item())

# the training objective adds a covariance penalty on each embedding
loss_a, loss_b, diag = graphac_losses(h_a, h_b, LossConfig())
print(f"composite: A {loss_a.item():.4f}, B {loss_b.item():.4f}, cov {diag['cov_term']:.4f}")
