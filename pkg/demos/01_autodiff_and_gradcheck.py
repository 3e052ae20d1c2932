"""The tape engine in a few lines, then a finite-difference check of one conv.

Every op that touches a tracked tensor while a Tape is open appends a node
with its backward rule.  backward() walks the nodes in reverse once.
"""

import numpy as np

from vasl.gradcheck import gradcheck
from vasl.layers import ConvSpec, conv2d
from vasl.tensor import Tape, Tensor, backward, mul, relu, sum_all

x = Tensor(np.array([-1.0, 0.5, 2.0, 3.0]).reshape(1, 1, 2, 2), requires_grad=True)

with Tape() as tape:
    y = sum_all(mul(relu(x), x))  # sum of x^2 over positive entries
    print("recorded nodes:", len(tape.nodes))
    backward(y)

print("loss:", y.item())
print("grad:", x.grad.reshape(-1), "(expected 2x where x > 0, else 0)")

# A dilated conv against central differences.  Errors around 1e-9 are typical
# in float64 with step 1e-5.
spec = ConvSpec(3, 2, (3, 3), padding=2, dilation=2, bias=True)
report = gradcheck(lambda a, w, b: conv2d(a, spec, w, b), [(2, 3, 8, 8), spec.weight_dims, (1, 2, 1, 1)], seed=0)
print(report)
