"""Pure-numpy MLP kernels.

This is the fallback backend and the reference the compiled kernels are
tested against. Every function takes the raw parameter lists so that the
two backends share one calling convention.

Layout: ``weights[l]`` has shape ``(fan_in, fan_out)`` and a layer computes
``z = a @ W + b``. Activations are integer codes (see ``ACTIVATION_CODES``).
Losses act on ``pred = mult * out[:, 0]`` against ``y``.
"""

import numpy as np

IDENTITY, RELU, TANH, SIGMOID, SCALED_SIGMOID = 0, 1, 2, 3, 4
ACTIVATION_CODES = {
    "identity": IDENTITY,
    "relu": RELU,
    "tanh": TANH,
    "sigmoid": SIGMOID,
    "scaled_sigmoid": SCALED_SIGMOID,
}
LOSS_MAE, LOSS_PINBALL = 0, 1

# Pre-activations are clipped here before the bounded sigmoid so the output
# stays strictly inside (0, bound) in float64.
Z_CLIP = 30.0


def activate(z, code, bound):
    if code == IDENTITY:
        return z
    if code == RELU:
        return np.maximum(z, 0.0)
    if code == TANH:
        return np.tanh(z)
    if code == SIGMOID:
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if code == SCALED_SIGMOID:
        return bound / (1.0 + np.exp(-np.clip(z, -Z_CLIP, Z_CLIP)))
    raise ValueError(f"unknown activation code {code}")


def activate_grad(z, a, code, bound):
    """Derivative of the activation, expressed through ``z`` and ``a``."""
    if code == IDENTITY:
        return np.ones_like(z)
    if code == RELU:
        return (z > 0.0).astype(z.dtype)
    if code == TANH:
        return 1.0 - a * a
    if code == SIGMOID:
        return a * (1.0 - a)
    if code == SCALED_SIGMOID:
        return a * (1.0 - a / bound) * (np.abs(z) < Z_CLIP)
    raise ValueError(f"unknown activation code {code}")


def forward(weights, biases, acts, bound, X):
    a = X
    for W, b, code in zip(weights, biases, acts):
        a = activate(a @ W + b, code, bound)
    return a


def _forward_cache(weights, biases, acts, bound, X):
    zs, activations = [], [X]
    a = X
    for W, b, code in zip(weights, biases, acts):
        z = a @ W + b
        a = activate(z, code, bound)
        zs.append(z)
        activations.append(a)
    return zs, activations


def loss_and_dpred(pred, y, loss, q):
    """Mean batch loss and d(loss)/d(pred) per sample (already divided by n)."""
    n = pred.shape[0]
    e = pred - y
    if loss == LOSS_MAE:
        return float(np.mean(np.abs(e))), np.sign(e) / n
    if loss == LOSS_PINBALL:
        u = -e
        value = np.mean(np.maximum(q * u, (q - 1.0) * u))
        d = np.where(u > 0.0, -q, np.where(u < 0.0, 1.0 - q, 0.0))
        return float(value), d / n
    raise ValueError(f"unknown loss code {loss}")


def loss_grad(weights, biases, acts, bound, X, y, mult, loss, q):
    zs, activations = _forward_cache(weights, biases, acts, bound, X)
    out = activations[-1][:, 0]
    value, dpred = loss_and_dpred(mult * out, y, loss, q)
    delta = np.zeros_like(activations[-1])
    delta[:, 0] = dpred * mult
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        delta = delta * activate_grad(zs[layer], activations[layer + 1], acts[layer], bound)
        grads_w[layer] = activations[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer:
            delta = delta @ weights[layer].T
    return value, grads_w, grads_b


def sgd_epoch(weights, biases, acts, bound, X, y, mult, order, batch_size, lr, loss, q):
    """One pass of mini-batch gradient descent, updating parameters in place.

    Returns the sample-weighted mean of the pre-update batch losses.
    """
    n = order.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        value, gw, gb = loss_grad(weights, biases, acts, bound, X[idx], y[idx], mult[idx], loss, q)
        for W, b, dW, db in zip(weights, biases, gw, gb):
            W -= lr * dW
            b -= lr * db
        total += value * idx.shape[0]
    return total / n


def adam_epoch(weights, biases, acts, bound, X, y, mult, order, batch_size, lr, loss, q,
               m_w, m_b, v_w, v_b, step, beta1, beta2, eps):
    """One pass of mini-batch Adam, updating parameters and moments in place.

    ``step`` is the number of updates already taken (for bias correction).
    Returns ``(mean batch loss, new step)``.
    """
    n = order.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        value, gw, gb = loss_grad(weights, biases, acts, bound, X[idx], y[idx], mult[idx], loss, q)
        step += 1
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        for params, grads, ms, vs in ((weights, gw, m_w, v_w), (biases, gb, m_b, v_b)):
            for p, g, m, v in zip(params, grads, ms, vs):
                m *= beta1
                m += (1.0 - beta1) * g
                v *= beta2
                v += (1.0 - beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        total += value * idx.shape[0]
    return total / n, step
