"""Triplet attention: three gates on three orientations of the same tensor.

Branch cw swaps channels with height, hc swaps channels with width, hw is
plain spatial attention.  Each branch Z-pools (max and mean) down to two
planes, runs a 2->1 7x7 conv + BN + sigmoid, and scales its input.
"""

import numpy as np

from vasl.attention import attention_param_count, make_attention
from vasl.tensor import randn

layer = make_attention(seed=3)
x = randn((1, 8, 16, 16), seed=1)
out = layer(x)

print("params:", attention_param_count(layer))  # 3 * (2*7*7 + 2)
print("in/out dims:", x.dims, out.dims)
for label, gate in layer.last_gates.items():
    print(f"gate {label}: shape {gate.shape[1:]}, range [{gate.min():.3f}, {gate.max():.3f}]")

layer.bypass = True
print("bypass max |out - in|:", np.abs(layer(x).data - x.data).max())
