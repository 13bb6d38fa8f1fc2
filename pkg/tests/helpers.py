"""Hand-built networks with known outputs."""
import numpy as np

from abmprior import nn
from abmprior.dataset import SnippetBatch


def constant_net(d_in, d_out, value, widths=(3,)):
    arch = nn.Architecture(d_in, widths, d_out, first_layer_norm=False)
    v = np.zeros(arch.n_params)
    layers, _ = nn._layout(arch)
    v[layers[-1][2]] = value
    return nn.ParamSet(v, arch)


def linear_critic(obs_dim, w, shift=100.0):
    """Q(s, a) = w . a exactly: the hidden layer copies a + shift, which ELU passes unchanged."""
    w = np.asarray(w, dtype=np.float64)
    a = w.size
    arch = nn.Architecture(obs_dim + a, (a,), 1, first_layer_norm=False)
    v = np.zeros(arch.n_params)
    (s0, w0, b0, _, _), (s1, w1, b1, _, _) = nn._layout(arch)[0]
    W0 = np.zeros(s0)
    W0[:, obs_dim:] = np.eye(a)
    v[w0] = W0.ravel()
    v[b0] = shift
    v[w1] = w
    v[b1] = -shift * w.sum()
    return nn.ParamSet(v, arch)


def quadratic_critic(obs_dim, b, k=1e-2):
    """Q(s, a) ~= -(a - b)^2 for 1-D actions.

    elu(x) + elu(-x) = |x| + expm1(-|x|) = x^2/2 + O(|x|^3), so with a small
    slope k the scaled sum matches the parabola to relative order k*|a - b|.
    """
    arch = nn.Architecture(obs_dim + 1, (2,), 1, first_layer_norm=False)
    v = np.zeros(arch.n_params)
    (s0, w0, b0, _, _), (s1, w1, b1, _, _) = nn._layout(arch)[0]
    W0 = np.zeros(s0)
    W0[0, obs_dim] = k
    W0[1, obs_dim] = -k
    v[w0] = W0.ravel()
    v[b0] = [-k * b, k * b]
    v[w1] = -2.0 / k**2
    return nn.ParamSet(v, arch)


def batch_from_arrays(obs, actions, rewards, next_obs=None, terminals=None):
    obs = np.asarray(obs, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    return SnippetBatch(
        observations=obs,
        actions=np.asarray(actions, dtype=np.float64),
        rewards=rewards,
        next_observations=obs if next_obs is None else np.asarray(next_obs, dtype=np.float64),
        terminals=np.zeros(rewards.shape, dtype=bool) if terminals is None else np.asarray(terminals),
    )
