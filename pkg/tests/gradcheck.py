"""Central finite-difference gradient checking in 64-bit mode."""
import numpy as np

from admpo import autodiff as ad


def rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def numeric_grads(loss_fn, params, h=1e-4):
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_grad_error(loss_fn, params, h=1e-4, floor=1e-6):
    """Worst relative error between analytic and central-difference gradients."""
    analytic = ad.backward(loss_fn(), params)
    numeric = numeric_grads(loss_fn, params, h)
    return max(float(rel_error(a, n, floor).max()) for a, n in zip(analytic, numeric))
