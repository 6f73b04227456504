"""A short walk through the tape-based autodiff core."""

import numpy as np

from charbench import autodiff as ad

rng = np.random.default_rng(0)

# tensors only get recorded on the tape when they ask for gradients
x = ad.Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
w = ad.Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.1, requires_grad=True)
b = ad.Tensor(np.zeros(4), requires_grad=True)

with ad.Tape() as tape:
    y = ad.conv2d(x, w, b, stride=1, padding=1)   # (2, 4, 8, 8)
    y = ad.relu(y)
    y = ad.maxpool2d(y, 2, 2)                    # (2, 4, 4, 4)
    logits = ad.linear(ad.flatten(y), ad.Tensor(rng.standard_normal((3, 64)) * 0.1, requires_grad=True),
                       ad.Tensor(np.zeros(3), requires_grad=True))
    loss = ad.softmax_cross_entropy(logits, np.array([0, 2]))
    tape.backward(loss)

print("loss", float(loss.data))
print("grad shapes:", x.grad.shape, w.grad.shape, b.grad.shape)

# gradients accumulate until cleared
ad.zero_grads([x, w, b])
print("after zero_grads:", x.grad, w.grad)

# compare analytic and numeric gradients for one op
res = ad.grad_check(lambda a, k: ad.conv2d(a, k, None, stride=2, padding=1),
                    [rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3))],
                    op_name="conv2d stride 2")
print(res)

# and the whole suite, a few seeds only
for r in ad.run_gradcheck_suite(seeds=range(2)):
    print(f"  {r.op_name:<24} {r.max_rel_error:.2e}")
