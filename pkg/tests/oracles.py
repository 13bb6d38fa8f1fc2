"""Straight-line reference implementations used as test oracles.

These are written independently of the package code: plain loops, no shared
helpers, no vectorisation tricks.
"""
from __future__ import annotations

import math

import numpy as np


def mlp_forward(values, input_dim, widths, output_dim, x, layer_norm=True, ln_eps=1e-6):
    """Per-example loop over the flat parameter layout [W, b, (gain, offset)] per layer."""
    dims = [input_dim, *widths, output_dim]
    out = []
    for row in np.atleast_2d(x):
        h = list(row)
        pos = 0
        for layer in range(len(dims) - 1):
            d_in, d_out = dims[layer], dims[layer + 1]
            W = [[values[pos + i * d_in + j] for j in range(d_in)] for i in range(d_out)]
            pos += d_in * d_out
            b = [values[pos + i] for i in range(d_out)]
            pos += d_out
            z = [sum(W[i][j] * h[j] for j in range(d_in)) + b[i] for i in range(d_out)]
            if layer == len(dims) - 2:
                h = z
                break
            if layer == 0 and layer_norm:
                gain = [values[pos + i] for i in range(d_out)]
                pos += d_out
                off = [values[pos + i] for i in range(d_out)]
                pos += d_out
                mu = sum(z) / d_out
                var = sum((zi - mu) ** 2 for zi in z) / d_out
                z = [(zi - mu) / math.sqrt(var + ln_eps) * g + o for zi, g, o in zip(z, gain, off)]
            h = [zi if zi > 0 else math.expm1(zi) for zi in z]
        out.append(h)
    return np.array(out)


def adam_trace(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam, one parameter at a time."""
    x = list(x0)
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    for t, g in enumerate(grads, start=1):
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            x[i] -= lr * mh / (math.sqrt(vh) + eps)
    return np.array(x)


def nstep(rewards, gamma, v_boot, t, terminals=None):
    """R(tau_{t:N}) for 1-indexed t, rewards r_1..r_N."""
    n = len(rewards)
    terminals = terminals or [False] * n
    total = 0.0
    for j in range(t, n):
        total += gamma ** (j - t) * rewards[j - 1]
        if terminals[j - 1]:
            return total
    return total + gamma ** (n - t) * v_boot


def softmax(q, eta):
    m = max(q)
    e = [math.exp((x - m) / eta) for x in q]
    s = sum(e)
    return [x / s for x in e]


def dual(q_rows, eta, eps):
    """eta*eps + eta * mean_s log mean_j exp(q/eta), via math.fsum in a stable form."""
    terms = []
    for row in q_rows:
        m = max(row)
        terms.append(m / eta + math.log(sum(math.exp((x - m) / eta) for x in row) / len(row)))
    return eta * eps + eta * sum(terms) / len(terms)


def gauss_kl_1d(m1, s1, m2, s2):
    return math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5


def stol(v, eps_tol, r):
    if abs(v) < eps_tol:
        return 1.0
    return 1.0 - math.tanh(math.atanh(math.sqrt(0.95)) / r * abs(v)) ** 2


def point_mass_rollout(pos0, actions, dt, low, high, limit):
    """Hand integration: clip the command, move, clip to the box."""
    pos = list(pos0)
    out = []
    for a in actions:
        pos = [min(max(p + min(max(ai, -limit), limit) * dt, lo), hi) for p, ai, lo, hi in zip(pos, a, low, high)]
        out.append(list(pos))
    return np.array(out)


def tabular_q(P, R, pi, gamma, iters=5000):
    """Iterative policy evaluation (independent of the linear solve)."""
    S, A = R.shape
    Q = np.zeros((S, A))
    for _ in range(iters):
        V = (pi * Q).sum(axis=1)
        Q = R + gamma * np.einsum("sat,t->sa", P, V)
    return Q
