"""Fit a tiny curve with the tape-based autograd and check one gradient.

Run from the repository root:

    python3 demos/autograd_basics.py
"""

import numpy as np

from nesa import autograd as ag
from nesa.autograd import Tensor


def main() -> None:
    rng = np.random.default_rng(3)
    xs = np.linspace(-1.0, 1.0, 64, dtype=np.float32).reshape(-1, 1)
    ys = np.sin(2.5 * xs) + 0.05 * rng.standard_normal(xs.shape,
                                                       dtype=np.float32)

    # y = W2 tanh(W1 x + b1) + b2, mean squared error
    w1 = Tensor(rng.standard_normal((1, 16), dtype=np.float32) * 0.5,
                requires_grad=True)
    b1 = Tensor(np.zeros(16, dtype=np.float32), requires_grad=True)
    w2 = Tensor(rng.standard_normal((16, 1), dtype=np.float32) * 0.5,
                requires_grad=True)
    b2 = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
    params = [w1, b1, w2, b2]

    def predict(x: Tensor) -> Tensor:
        hidden = ag.tanh(ag.add(ag.matmul(x, w1), b1))
        return ag.add(ag.matmul(hidden, w2), b2)

    def mse() -> Tensor:
        diff = ag.sub(predict(Tensor(xs)), Tensor(ys))
        return ag.scale(ag.sum_all(ag.mul(diff, diff)), 1.0 / len(xs))

    opt = ag.AdamState()
    for step in range(401):
        ag.zero_grads(params)
        with ag.Tape() as tape:
            loss = mse()
            tape.backward(loss)
        ag.clip_grad_norm(params, 5.0)
        ag.adam_step(params, opt, lr=0.01)
        if step % 100 == 0:
            print(f"step {step:3d}  mse {loss.item():.5f}")

    # Spot-check one weight's gradient against central differences.
    ag.zero_grads(params)
    with ag.Tape() as tape:
        tape.backward(mse())
    i, j = 0, 3
    h = 1e-3
    orig = float(w1.data[i, j])
    w1.data[i, j] = orig + h
    hi = mse().item()
    w1.data[i, j] = orig - h
    lo = mse().item()
    w1.data[i, j] = orig
    numeric = (hi - lo) / (2 * h)
    print(f"\nd mse / d w1[{i},{j}]: tape {w1.grad[i, j]:+.6f}  "
          f"numeric {numeric:+.6f}")


if __name__ == "__main__":
    main()
