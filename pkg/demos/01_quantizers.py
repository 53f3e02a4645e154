"""Uniform affine and log2 quantization on a small activation tensor.

Walks through fitting an 8-bit affine quantizer, the half-step reconstruction
guarantee, and the log2 quantizer's exact handling of power-of-two ratios
(the reason it suits softmax outputs, whose mass decays geometrically).
"""

import numpy as np

import agq

rng = np.random.default_rng(0)

# --- affine: fit, quantize, reconstruct -----------------------------------
x = rng.uniform(-1.5, 2.5, (6, 8)).astype(np.float32)
params = agq.fit_affine(x, bits=8)
q = agq.quantize_affine(x, params)
recon = agq.dequantize_affine(q)

print("affine 8-bit")
print(f"  scale      = {params.scale:.6g}")
print(f"  zero point = {params.zero_point}")
print(f"  code range = [{q.codes.min()}, {q.codes.max()}]")
print(f"  max |x - x_hat| = {np.abs(x - recon).max():.6g}"
      f"  (half step = {params.scale / 2:.6g})")

# --- log2: dyadic magnitudes round-trip exactly ---------------------------
probs = np.array([[0.8, 0.4, 0.2, 0.1, 0.0]], dtype=np.float32)
lq = agq.quantize_log2(probs, bits=4)
print("\nlog2 4-bit on a softmax-like row")
print(f"  codes = {lq.codes[0].tolist()}   (code k means max * 2^-k)")
print(f"  signs = {lq.signs[0].tolist()}   (exact zeros keep sign 0)")
print(f"  round trip exact: {np.array_equal(agq.dequantize_log2(lq), probs)}")

# --- the trade-off: affine wastes codes on heavy tails --------------------
tail = np.array([[1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]], dtype=np.float32)
aq = agq.quantize_affine(tail, agq.fit_affine(tail, 4))
lq = agq.quantize_log2(tail, 4)
err_a = np.abs(tail - agq.dequantize_affine(aq)).max()
err_l = np.abs(tail - agq.dequantize_log2(lq)).max()
print("\ngeometric tail, 4 bits each")
print(f"  affine max error = {err_a:.6g}")
print(f"  log2 max error   = {err_l:.6g}  (exact on powers of two)")
