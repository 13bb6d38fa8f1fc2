"""Central finite-difference checks for every hand-derived gradient."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import gaussian as G
from . import mpo, nn, priors, svg
from .dataset import SnippetBatch
from .policy_eval import CriticPair, td_loss_and_grad

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def central_diff(fn: Callable[[np.ndarray], float], x, h: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = fn(x)
        x.flat[i] = orig - h
        fm = fn(x)
        x.flat[i] = orig
        out.flat[i] = (fp - fm) / (2.0 * h)
    return out


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    """Largest componentwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _net(rng, d_in, d_out, widths=(5, 5), ln=True, head=False):
    p = nn.init_params(nn.Architecture(d_in, widths, d_out, first_layer_norm=ln), rng)
    v = p.values.copy()
    # randomise biases and layer-norm parameters too so every code path is exercised
    v += 0.3 * rng.standard_normal(v.size)
    if head:
        # keep softplus(h) away from the std floor, where the clamp has a kink
        layers, _ = nn._layout(p.arch)
        b = layers[-1][2]
        a = d_out // 2
        v[b.start + a:b.stop] += 1.0
    return p.with_values(v)


def _batch(rng, B=3, N=3, o=3, a=2):
    return SnippetBatch(
        observations=rng.standard_normal((B, N, o)),
        actions=rng.standard_normal((B, N, a)),
        rewards=rng.standard_normal((B, N)),
        next_observations=rng.standard_normal((B, N, o)),
        terminals=rng.random((B, N)) < 0.2,
    )


def _away_from_floor(policy, obs, margin=0.02) -> bool:
    raw = nn.forward(policy, obs)
    a = raw.shape[-1] // 2
    sp = G.softplus(raw[..., a:])
    return bool(np.all(np.abs(sp - G.MIN_STD) > margin))


def _head_net(rng, d_in, a, obs, widths=(5, 5)):
    for _ in range(100):
        p = _net(rng, d_in, 2 * a, widths, head=True)
        if _away_from_floor(p, obs):
            return p
    raise RuntimeError("could not draw a policy network away from the std floor")


def check_nn(rng) -> float:
    d_in, d_out = 3, 2
    p = _net(rng, d_in, d_out, ln=bool(rng.random() < 0.8))
    x = rng.standard_normal((4, d_in))
    up = rng.standard_normal((4, d_out))
    gp, gx = nn.backward(p, x, up)
    fp = central_diff(lambda v: float(np.sum(nn.forward(p.with_values(v), x) * up)), p.values)
    fx = central_diff(lambda xx: float(np.sum(nn.forward(p, xx) * up)), x)
    return max(rel_error(gp, fp), rel_error(gx, fx))


def check_td(rng) -> float:
    batch = _batch(rng)
    o, a = batch.observations.shape[-1], batch.actions.shape[-1]
    critic = _net(rng, o + a, 1, (5, 5))
    pair = CriticPair.create(critic)
    policy = _net(rng, o, 2 * a, head=True)
    v_next = rng.standard_normal(batch.rewards.shape)
    gamma = 0.9
    _, g = td_loss_and_grad(batch, pair, policy, gamma, 4, rng, v_next=v_next)

    def f(v):
        return td_loss_and_grad(batch, CriticPair(critic.with_values(v), critic), policy, gamma, 4, rng,
                                v_next=v_next)[0]

    return rel_error(g, central_diff(f, critic.values))


def check_bm(rng) -> float:
    batch = _batch(rng)
    o, a = batch.observations.shape[-1], batch.actions.shape[-1]
    prior = _head_net(rng, o, a, batch.observations[:, :-1].reshape(-1, o))
    _, g = priors.bm_loss_and_grad(batch, prior)
    return rel_error(g, central_diff(lambda v: priors.bm_loss_and_grad(batch, prior.with_values(v))[0], prior.values))


def check_abm(rng) -> float:
    batch = _batch(rng, B=4)
    o, a = batch.observations.shape[-1], batch.actions.shape[-1]
    prior = _head_net(rng, o, a, batch.observations[:, :-1].reshape(-1, o))
    w = (rng.random((batch.batch_size, batch.length - 1)) < 0.6).astype(float)
    w[0, 0] = 1.0
    _, g = priors.abm_loss_and_grad(batch, w, prior)
    return rel_error(g, central_diff(lambda v: priors.abm_loss_and_grad(batch, w, prior.with_values(v))[0],
                                     prior.values))


def check_mpo(rng, decoupled: bool = False) -> float:
    S, M, o, a = 4, 5, 3, 2
    obs = rng.standard_normal((S, o))
    policy = _head_net(rng, o, a, obs)
    old = _head_net(rng, o, a, obs)
    acts = rng.standard_normal((S, M, a))
    w = mpo.nonparam_weights(rng.standard_normal((S, M)), 0.7)
    dual = mpo.DualState(eta=1.0, alpha=float(rng.uniform(0.1, 2)), alpha_mu=float(rng.uniform(0.1, 2)),
                         alpha_sigma=float(rng.uniform(0.1, 2)))
    kw = dict(eps_trust=0.1, decoupled=decoupled, eps_mu=5e-3, eps_sigma=1e-5)
    _, g, ga = mpo.mpo_policy_loss_and_grad(obs, acts, w, dual, policy, old, **kw)

    def f(v):
        return mpo.mpo_policy_loss_and_grad(obs, acts, w, dual, policy.with_values(v), old, **kw)[0]

    err = rel_error(g, central_diff(f, policy.values))

    def fa(al):
        if decoupled:
            d = mpo.DualState(dual.eta, dual.alpha, float(al[0]), float(al[1]))
        else:
            d = mpo.DualState(dual.eta, float(al[0]), dual.alpha_mu, dual.alpha_sigma)
        return mpo.mpo_policy_loss_and_grad(obs, acts, w, d, policy, old, **kw)[0]

    a0 = np.array([dual.alpha_mu, dual.alpha_sigma]) if decoupled else np.array([dual.alpha])
    return max(err, rel_error(np.atleast_1d(ga), central_diff(fa, a0)))


def check_dual(rng) -> float:
    q = rng.standard_normal((6, 8)) * rng.uniform(0.1, 3)
    eta = float(rng.uniform(0.2, 3.0))
    eps = float(rng.uniform(0.01, 0.5))
    _, dg = mpo.dual_value_and_grad(q, eta, eps)
    fd = central_diff(lambda e: mpo.dual_value_and_grad(q, float(e[0]), eps)[0], np.array([eta]))
    return rel_error(dg, fd[0])


def check_svg(rng) -> float:
    S, M, o, a = 4, 3, 3, 2
    obs = rng.standard_normal((S, o))
    policy = _head_net(rng, o, a, obs)
    prior = _head_net(rng, o, a, obs)
    critic = _net(rng, o + a, 1, (5, 5))
    noise = rng.standard_normal((S, M, a))
    eta, eps = float(rng.uniform(0.1, 2.0)), 0.2
    _, g = svg.svg_policy_loss_and_grad(obs, policy, prior, critic, eta, eps, noise=noise)

    def f(v):
        return svg.svg_policy_loss_and_grad(obs, policy.with_values(v), prior, critic, eta, eps, noise=noise)[0]

    err = rel_error(g, central_diff(f, policy.values))
    ge = svg.svg_eta_grad(obs, policy, prior, eps)
    fe = central_diff(lambda e: svg.svg_policy_loss_and_grad(obs, policy, prior, critic, float(e[0]), eps,
                                                             noise=noise)[0], np.array([eta]))
    return max(err, rel_error(ge, fe[0]))


CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "nn_core": check_nn,
    "policy_eval.td": check_td,
    "priors.bm": check_bm,
    "priors.abm": check_abm,
    "improve_mpo.policy": check_mpo,
    "improve_mpo.policy_decoupled": lambda rng: check_mpo(rng, decoupled=True),
    "improve_mpo.dual": check_dual,
    "improve_svg.policy": check_svg,
}


def run_gradcheck(n_instances: int = 50, seed: int = 0, checks=None) -> dict[str, float]:
    """Max relative error per check over ``n_instances`` random instances."""
    rng = np.random.default_rng(seed)
    results = {}
    for name in checks or CHECKS:
        results[name] = max(CHECKS[name](rng) for _ in range(n_instances))
    return results


def main(n_instances: int = 50, seed: int = 0, tol: float = 1e-4, out=print) -> bool:
    t0 = time.perf_counter()
    results = run_gradcheck(n_instances, seed)
    ok = True
    for name, err in results.items():
        passed = err <= tol
        ok &= passed
        out(f"{name:32s} max_rel_err={err:.3e} {'ok' if passed else 'FAIL'}")
    out(f"gradcheck {'passed' if ok else 'failed'} in {time.perf_counter() - t0:.1f}s "
        f"({n_instances} instances per check, h={FD_STEP:g}, tol={tol:g})")
    return ok
