"""A walk through the tensor core: forward ops, reverse-mode gradients,
finite-difference verification, and the Adam update.

Run: python demos/01_autodiff.py
"""

import numpy as np

from newsrec import autodiff as ad
from newsrec.autodiff import Tensor

# --- forward ops -----------------------------------------------------------

a = Tensor([[1.0, 2.0], [3.0, 4.0]])
b = Tensor([[5.0], [6.0]])
print("matmul:\n", (a @ b).data)                      # [[17], [39]]
print("softmax([ln2, 0]):", ad.softmax(Tensor([np.log(2.0), 0.0])).data)
print("softmax([1000, 0]) stays finite:", ad.softmax(Tensor([1000.0, 0.0])).data)

# --- gradients -------------------------------------------------------------

x = Tensor(3.0, requires_grad=True)
y = Tensor(4.0, requires_grad=True)
loss = x * y
loss.backward()
print("d(x*y)/dx at (3,4):", x.grad, " d/dy:", y.grad)

# gradients accumulate until zeroed, like any training loop expects
loss2 = x * x
loss2.backward()
print("x.grad after a second backward (4 + 6):", x.grad)
ad.zero_grad([x, y])

# --- verify against central differences ------------------------------------

w = Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
v = Tensor(np.random.default_rng(1).normal(size=(3, 1)), requires_grad=True)


def f(params):
    h = ad.tanh(params["w"] @ params["v"])
    return ad.tmean(ad.sigmoid(h))


errs = ad.finite_difference_check(f, {"w": w, "v": v}, eps=1e-5)
print("finite-difference max relative errors:", {k: f"{e:.2e}" for k, e in errs.items()})

# --- Adam ------------------------------------------------------------------

p = Tensor(np.array([5.0]), requires_grad=True)
state = ad.AdamState()
for step in range(200):
    ad.zero_grad([p])
    obj = ad.tsum(ad.powc(p - 2.0, 2.0))  # minimum at p = 2
    obj.backward()
    ad.adam_step({"p": p}, {"p": p.grad}, state, lr=0.05)
print(f"Adam pulled p to {p.data[0]:.4f} (target 2.0) in {state.step} steps")
