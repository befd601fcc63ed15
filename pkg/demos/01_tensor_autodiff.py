"""The autodiff core on its own: fit a line, verify the gradients.

Everything downstream (encoders, fusion, experts) is built from the same
handful of primitives shown here, so if this script holds, the rest is
plumbing.
"""

import numpy as np

from msmf.numcore import (Rng, affine, backward, check_gradients, constant,
                          mean, param, square)

rng = Rng(7)

# y = 3x - 1 plus noise, as a [N, 1] regression problem
x = rng.normal((64, 1))
y = 3.0 * x - 1.0 + 0.1 * rng.normal((64, 1))

w = param(rng.normal((1, 1), scale=0.1), name="w")
b = param(np.zeros(1), name="b")
xs, ys = constant(x), constant(y)

print("fitting y = wx + b by gradient descent on the tape")
for step in range(200):
    loss = mean(square(affine(xs, w, b) - ys))
    backward(loss)
    for p in (w, b):
        p.value -= 0.1 * p.grad
        p.grad = None
    if step % 50 == 0:
        print(f"  step {step:3d}  loss {float(loss.value):.5f}")

print(f"learned w={float(w.value[0, 0]):+.3f} b={float(b.value[0]):+.3f} "
      "(target +3.000 -1.000)")
assert abs(float(w.value[0, 0]) - 3.0) < 0.1
assert abs(float(b.value[0]) + 1.0) < 0.1

# the same harness every model test uses: reverse-mode vs central differences
def loss_fn(params):
    return mean(square(affine(xs, params[0], params[1]) - ys))

err = check_gradients(loss_fn, [w, b])
print(f"finite-difference check: max relative error {err:.2e}")
# near the optimum both gradients are tiny, so the relative error is
# dominated by finite-difference noise; 1e-4 is still far from wrong
assert err < 1e-4
print("ok")
