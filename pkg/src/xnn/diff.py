"""Order-2 jets through the subnetworks and exact gradients of the penalized
objective.

Every subnetwork is a scalar function of its projection z, so (value, d/dz,
d^2/dz^2) can be pushed forward layer by layer.  The roughness penalty needs
the second derivative; its parameter gradient is obtained by running reverse
accumulation over that same jet recursion.  Normalization statistics enter
as constants: no gradient flows through batch mean or std.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Hyperparams
from .errors import NumericError, ShapeError
from .model import NormState, Subnetwork, XnnModel, _check_X, init_model, raw_outputs


@dataclass
class Jet2:
    v: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self):
        if not (self.v.shape == self.d1.shape == self.d2.shape):
            raise ShapeError("jet components must share one shape")


@dataclass
class Grads:
    g_W: np.ndarray
    g_beta: np.ndarray
    g_mu: float
    g_weights: list[np.ndarray]  # stacked like XnnModel.weights
    g_biases: list[np.ndarray]

    @property
    def g_layers(self) -> list[list[tuple[np.ndarray, np.ndarray]]]:
        """Per-subnetwork, per-layer (weight, bias) gradients."""
        k = self.g_beta.shape[0]
        return [[(w[j], b[j]) for w, b in zip(self.g_weights, self.g_biases)] for j in range(k)]

    def flat(self) -> np.ndarray:
        parts = [self.g_W.ravel(), self.g_beta.ravel(), np.atleast_1d(self.g_mu)]
        parts += [g.ravel() for g in self.g_weights] + [g.ravel() for g in self.g_biases]
        return np.concatenate(parts)


def _tanh_jet(a, a1, a2):
    t = np.tanh(a)
    s = t * t
    np.subtract(1.0, s, out=s)
    d1 = s * a1
    d2 = t * d1
    d2 *= a1
    d2 *= -2.0
    d2 += s * a2
    return t, s, d1, d2


def subnet_jet(s: Subnetwork, z) -> Jet2:
    v = np.asarray(z, dtype=float).reshape(-1, 1)
    d1 = np.ones_like(v)
    d2 = np.zeros_like(v)
    last = len(s.layers) - 1
    for l, layer in enumerate(s.layers):
        wt = layer.weights.T
        v, d1, d2 = v @ wt + layer.biases, d1 @ wt, d2 @ wt
        if l < last and s.activation == "tanh":
            v, _, d1, d2 = _tanh_jet(v, d1, d2)
    return Jet2(v[:, 0], d1[:, 0], d2[:, 0])


def roughness(j: Jet2, ns: NormState) -> float:
    std = max(ns.std, ns.epsilon)
    return float(np.mean((j.d2 / std) ** 2))


def _stacked_jet_forward(model: XnnModel, Z: np.ndarray):
    """Jets of all subnetworks at the columns of Z; returns (v, d1, d2, cache).

    Outputs have shape (k, n).  ``cache`` holds what the reverse sweep needs.
    The input jet is (z, 1, 0), so the first layer's derivative jets are
    constant over samples and kept with a broadcast axis of length 1.
    """
    k, n = Z.shape[1], Z.shape[0]
    v = Z.T[:, :, None]
    d1 = np.ones((k, 1, 1))
    d2 = np.zeros((k, 1, 1))
    cache = []
    last = len(model.weights) - 1
    tanh = model.activation == "tanh"
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        wt = w.transpose(0, 2, 1)
        av = v @ wt
        av += b[:, None, :]
        a1, a2 = d1 @ wt, d2 @ wt
        if l < last and tanh:
            t, s, d1o, d2o = _tanh_jet(av, a1, a2)
            cache.append((v, d1, d2, t, s, a1, a2))
            v, d1, d2 = t, d1o, d2o
        else:
            cache.append((v, d1, d2, None, None, None, None))
            v, d1, d2 = av, a1, a2
    shape = (k, n)
    return (v[:, :, 0], np.broadcast_to(d1[:, :, 0], shape),
            np.broadcast_to(d2[:, :, 0], shape), cache)


def _tanh_adjoint(gv, g1, g2, t, s, a1, a2, need_g2=True):
    """Pull output-jet adjoints back through (tanh a, s a', s a'' - 2 t s a'^2)."""
    u = t * a1
    ng1 = u * g2
    ng1 *= -4.0
    ng1 += g1
    ng1 *= s
    # d/da of the d2 output: 2 s a'^2 (3 t^2 - 1) - 2 t s a''
    c = t * t
    c *= 3.0
    c -= 1.0
    c *= a1 * a1
    c -= t * a2
    c *= 2.0
    c *= g2
    ngv = u * g1
    ngv *= -2.0
    ngv += gv
    ngv += c
    ngv *= s
    ng2 = g2 * s if need_g2 else None
    return ngv, ng1, ng2


def _sum_n(x):
    return x.sum(axis=1)


def _weight_grad(g, x):
    """sum_n g[:, n, :]^T x[:, n, :] where x may be broadcast over n."""
    if x.shape[1] == g.shape[1]:
        return g.transpose(0, 2, 1) @ x
    return _sum_n(g)[:, :, None] * x


def _stacked_jet_backward(model: XnnModel, cache, gv, g1, g2):
    """Reverse sweep over the jet recursion.

    ``gv, g1, g2`` are adjoints of the output jet, shape (k, n).  Returns the
    stacked weight/bias gradients and the adjoint of the input z, (k, n).
    """
    gv, g1, g2 = gv[:, :, None], g1[:, :, None], g2[:, :, None]
    n_layers = len(model.weights)
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        v_in, d1_in, d2_in, t, s, a1, a2 = cache[l]
        if t is not None:
            gv, g1, g2 = _tanh_adjoint(gv, g1, g2, t, s, a1, a2, need_g2=l > 0)
        g_w[l] = _weight_grad(gv, v_in) + _weight_grad(g1, d1_in)
        if l > 0:
            g_w[l] += _weight_grad(g2, d2_in)
        g_b[l] = _sum_n(gv)
        w = model.weights[l]
        if l == 0:
            gv = gv @ w
        else:
            gv, g1, g2 = gv @ w, g1 @ w, g2 @ w
    return g_w, g_b, gv[:, :, 0]


def batch_norm_stats(model: XnnModel, Xb) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and clamped std of each raw subnetwork output on a batch."""
    h = raw_outputs(model, Xb)
    return h.mean(axis=0), np.maximum(h.std(axis=0), model.norm_eps)


def _data_loss(eta, y, link):
    if link == "identity":
        r = eta - y
        return float(np.mean(r * r)), 2.0 * r / r.shape[0]
    loss = float(np.mean(np.logaddexp(0.0, eta) - y * eta))
    prob = np.exp(-np.logaddexp(0.0, -eta))
    return loss, (prob - y) / y.shape[0]


def loss_terms_and_grads(model: XnnModel, Xb, yb, hp: Hyperparams, norm=None,
                         include_l1: bool = True, stat_grad: bool = False):
    """Penalized loss split into its terms, plus exact gradients.

    ``norm`` is a ``(mean, std)`` pair of length-k arrays; ``None`` computes
    them from this batch.
    """
    Xb = _check_X(model, Xb)
    yb = np.asarray(yb, dtype=float).reshape(-1)
    n = Xb.shape[0]
    if n == 0 or yb.shape[0] != n:
        raise ShapeError(f"batch has {n} rows and {yb.shape[0]} responses")
    Z = Xb @ model.W
    hv, _, h2, cache = _stacked_jet_forward(model, Z)
    if norm is None:
        mean = hv.mean(axis=1)
        std = np.maximum(hv.std(axis=1), model.norm_eps)
    else:
        mean, std = (np.asarray(a, dtype=float) for a in norm)
        std = np.maximum(std, model.norm_eps)
    act = model.active
    beta = np.where(act, model.beta, 0.0)

    hn = (hv - mean[:, None]) / std[:, None]  # (k, n)
    eta = model.mu + beta @ hn
    data, d_eta = _data_loss(eta, yb, model.link)

    rough_j = np.mean((h2 / std[:, None]) ** 2, axis=1)
    rough = hp.lambda3 * float(rough_j[act].sum())
    terms = {"data": data, "roughness": rough, "l1_W": 0.0, "l1_beta": 0.0}
    if include_l1:
        terms["l1_W"] = hp.lambda1 * float(np.abs(model.W[:, act]).sum())
        terms["l1_beta"] = hp.lambda2 * float(np.abs(beta).sum())
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericError(f"non-finite {name} term in the loss: {value}")

    g_mu = float(d_eta.sum())
    g_beta = hn @ d_eta
    gv = (beta / std)[:, None] * d_eta[None, :]
    g2 = (2.0 * hp.lambda3 / n) * act[:, None] * h2 / (std * std)[:, None]
    if stat_grad and norm is None:
        # let the batch mean and std carry gradient as well
        live = (hv.std(axis=1) > model.norm_eps)[:, None]
        gv = gv - gv.mean(axis=1, keepdims=True)
        gv = gv - live * hn * (gv * hn).mean(axis=1, keepdims=True)
        gv = gv - live * (2.0 * hp.lambda3 * act * rough_j / (std * n))[:, None] * hn
    g_w, g_b, gz = _stacked_jet_backward(model, cache, gv, np.zeros_like(gv), g2)
    g_W = Xb.T @ gz.T
    if include_l1:
        g_W = g_W + hp.lambda1 * np.sign(model.W)
        g_beta = g_beta + hp.lambda2 * np.sign(model.beta)
    if not act.all():
        off = ~act
        g_W[:, off] = 0.0
        g_beta[off] = 0.0
        for g in g_w + g_b:
            g[off] = 0.0
    grads = Grads(g_W, g_beta, g_mu, g_w, g_b)
    return terms, grads, (mean, std)


def loss_and_grads(model: XnnModel, Xb, yb, hp: Hyperparams, norm=None,
                   include_l1: bool = True, stat_grad: bool = False) -> tuple[float, Grads]:
    terms, grads, _ = loss_terms_and_grads(model, Xb, yb, hp, norm, include_l1, stat_grad)
    return sum(terms.values()), grads


def penalized_loss(model: XnnModel, Xb, yb, hp: Hyperparams, norm=None,
                   include_l1: bool = True) -> float:
    terms, _, _ = loss_terms_and_grads(model, Xb, yb, hp, norm, include_l1)
    return sum(terms.values())


def _param_arrays(model: XnnModel) -> list[np.ndarray]:
    # Same order as Grads.flat(); mu is handled separately.
    return [model.W, model.beta, None, *model.weights, *model.biases]


def fd_check(model: XnnModel, Xb, yb, hp: Hyperparams, eps: float = 1e-5,
             corrupt: bool = False, live_stats: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    The l1 terms are left out, so the checked objective is smooth.  By
    default normalization statistics are frozen at the base point; with
    ``live_stats`` they are recomputed at every perturbed point and the
    analytic side is the gradient through the batch mean and std.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = model.copy()
    base.W = np.ascontiguousarray(base.W)
    base.beta = np.ascontiguousarray(base.beta)
    base.weights = [np.ascontiguousarray(w) for w in base.weights]
    base.biases = [np.ascontiguousarray(b) for b in base.biases]
    norm = None if live_stats else batch_norm_stats(base, Xb)
    _, grads = loss_and_grads(base, Xb, yb, hp, norm=norm, include_l1=False,
                              stat_grad=live_stats)
    analytic = grads.flat()
    if corrupt:
        analytic = analytic.copy()
        analytic[np.argmax(np.abs(analytic))] *= 1.01
        analytic[-1] += 1e-3

    def f(m):
        return penalized_loss(m, Xb, yb, hp, norm=norm, include_l1=False)

    numeric = []
    for idx, arr in enumerate(_param_arrays(base)):
        if arr is None:
            mu0 = base.mu
            base.mu = mu0 + eps
            fp = f(base)
            base.mu = mu0 - eps
            fm = f(base)
            base.mu = mu0
            numeric.append((fp - fm) / (2 * eps))
            continue
        flat = arr.reshape(-1)
        for i in range(flat.size):
            x0 = flat[i]
            flat[i] = x0 + eps
            fp = f(base)
            flat[i] = x0 - eps
            fm = f(base)
            flat[i] = x0
            numeric.append((fp - fm) / (2 * eps))
    numeric = np.asarray(numeric)
    floor = 1e-8
    if live_stats:
        # Live normalization makes some directions exactly flat (e.g. the
        # last-layer bias); there the difference quotient is pure round-off.
        floor = max(floor, 1e-4 * float(np.max(np.abs(analytic))))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def fd_suite(n_configs: int = 20, eps: float = 1e-5, seed: int = 0,
             corrupt: bool = False) -> list[dict]:
    """Run :func:`fd_check` on ``n_configs`` random small models.

    Configurations cycle through regression and classification, tanh and
    linear subnetworks, one to three hidden layers and lambda3 in
    {0, 1e-3, 1e-1}.  Each is checked with frozen and with live batch
    statistics; the record keeps the larger error.
    """
    archs = [(4, 3), (5,), (3, 4, 2), (6, 2)]
    out = []
    for i in range(n_configs):
        rng = np.random.default_rng([seed, i])
        p = int(rng.integers(2, 7))
        k = int(rng.integers(1, min(p, 3) + 1))
        task = "classification" if i % 2 else "regression"
        hp = Hyperparams(
            k=k, hidden=archs[i % len(archs)], lambda3=(0.0, 1e-3, 1e-1)[i % 3],
            activation="linear" if i % 7 == 6 else "tanh", task=task,
        )
        model = init_model(p, hp, rng)
        model.mu = float(rng.normal())
        n_b = int(rng.integers(6, 17))
        Xb = rng.uniform(-1.0, 1.0, size=(n_b, p))
        yb = (rng.integers(0, 2, n_b).astype(float) if task == "classification"
              else rng.normal(size=n_b))
        frozen = fd_check(model, Xb, yb, hp, eps, corrupt=corrupt)
        live = fd_check(model, Xb, yb, hp, eps, corrupt=corrupt, live_stats=True)
        out.append({"config": i, "p": p, "k": k, "hidden": list(hp.hidden), "task": task,
                    "activation": hp.activation, "lambda3": hp.lambda3,
                    "frozen_err": frozen, "live_err": live, "max_rel_err": max(frozen, live)})
    return out
