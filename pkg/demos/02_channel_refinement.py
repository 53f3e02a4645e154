"""Per-channel power-of-two refinement for outlier-channel activations.

A handful of channels in transformer activations carry values an order of
magnitude larger than the rest. A single shared scale then wastes most of the
code range on the quiet channels. The refinement keeps one shared scale but
lets each channel pick a power-of-two multiplier (a cheap shift), chosen by
exhaustive L2 search; the multipliers are then folded into the next weight
matrix so the activation path never sees them.
"""

import numpy as np

import agq

rng = np.random.default_rng(1)
t, d = 128, 8

x = rng.standard_normal((t, d)).astype(np.float32)
x[:, 2] *= 12.0  # one loud channel
x[:, 5] *= 25.0  # one louder channel

params = agq.fit_trip(x, bits=8, cap=3)
print("per-channel exponents (0 = finest step, cap = coarsest):")
print(f"  alphas = {params.alphas.tolist()}")
print(f"  steps  = {[f'{s:.4g}' for s in params.steps]}")

q = agq.quantize_trip(x, params)
refined = agq.dequantize_trip(q)

plain_params = agq.fit_affine(x, 8)
plain = agq.dequantize_affine(agq.quantize_affine(x, plain_params))

for c in range(d):
    e_ref = np.linalg.norm(x[:, c] - refined[:, c])
    e_pln = np.linalg.norm(x[:, c] - plain[:, c])
    tag = " <- outlier channel" if c in (2, 5) else ""
    print(f"  channel {c}: refined L2 {e_ref:8.4f}   plain L2 {e_pln:8.4f}{tag}")

# --- folding: the exponents vanish into the weights -----------------------
w = rng.standard_normal((d, 4)).astype(np.float32)
folded = agq.fold_trip_into_weights(w, params)
lhs = ((q.codes.astype(np.float64) - params.base.zero_point)
       @ folded.astype(np.float64)) * params.base.scale
rhs = refined.astype(np.float64) @ w.astype(np.float64)
rel = np.abs(lhs - rhs).max() / np.abs(rhs).max()
print(f"\nfolded-path vs dequantize-path relative gap: {rel:.3g}")
