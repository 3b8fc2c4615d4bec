"""The dense-matrix reverse-mode kernel that trains the estimator.

Verifies a composed gradient against central finite differences, then
minimizes a quadratic with Adam under the step-decay schedule.
"""

import numpy as np

from cardest import autodiff as ad
from cardest.autodiff import AdamState, Tensor, adam_step, backward, step_lr

rng = np.random.default_rng(0)
w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
g = Tensor(np.ones((1, 3)), requires_grad=True)
b = Tensor(np.zeros((1, 3)), requires_grad=True)


def loss_fn():
    h = ad.relu(ad.matmul(x, w))
    h = ad.layer_norm(h, g, b)
    return ad.mean(ad.square(ad.row_softmax(h)))


loss = loss_fn()
backward(loss)
print(f"loss = {loss.item():.6f}")

flat = w.data.reshape(-1)
idx, h = 5, 1e-5
orig = flat[idx]
flat[idx] = orig + h
up = loss_fn().item()
flat[idx] = orig - h
down = loss_fn().item()
flat[idx] = orig
fd = (up - down) / (2 * h)
an = w.grad.reshape(-1)[idx]
print(f"dL/dw[5]: reverse-mode {an:.10f} vs central difference {fd:.10f}")

print("\nminimizing (w - 3)^2 with Adam + step decay:")
w = Tensor(np.array([[0.0]]), requires_grad=True)
state = AdamState()
for epoch in range(6):
    lr = 0.2 * step_lr(step_size=2, gamma=0.5, epoch=epoch)
    for _ in range(20):
        w.zero_grad()
        backward(ad.square(ad.add(w, Tensor([[-3.0]]))))
        adam_step([("w", w)], state, lr=lr)
    print(f"  epoch {epoch}: lr={lr:.3f} w={w.data[0, 0]:.4f}")
