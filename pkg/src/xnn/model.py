"""The xNN architecture: orthogonal projection layer, k scalar subnetworks,
normalization nodes and a weighted sum with intercept.

Subnetwork parameters are stored stacked across the k subnetworks
(``weights[l]`` has shape ``(k, out, in)``) so every pass runs vectorized;
:attr:`XnnModel.subnets` gives the per-subnetwork view.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Hyperparams
from .errors import ConfigError, DegenerateError, ShapeError

MODEL_VERSION = "xnn-model/1"
LINKS = ("identity", "logit")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.biases = np.atleast_1d(np.asarray(self.biases, dtype=float))
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.biases.shape} does not match weights {self.weights.shape}"
            )


@dataclass
class Subnetwork:
    """Scalar-in, scalar-out dense network. The last layer is always linear."""

    layers: list[DenseLayer]
    activation: str = "tanh"

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a subnetwork needs at least one layer")
        if self.layers[0].weights.shape[1] != 1 or self.layers[-1].weights.shape[0] != 1:
            raise ShapeError("subnetwork must map a scalar input to a scalar output")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ShapeError(
                    f"layer widths do not chain: {a.weights.shape} -> {b.weights.shape}"
                )
        if self.activation not in ("tanh", "linear"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class NormState:
    mean: float = 0.0
    std: float = 1.0
    epsilon: float = 1e-5

    @classmethod
    def from_values(cls, h, epsilon: float = 1e-5) -> "NormState":
        h = np.asarray(h, dtype=float)
        return cls(float(h.mean()), max(float(h.std()), epsilon), epsilon)


@dataclass
class XnnModel:
    mu: float
    beta: np.ndarray  # (k,)
    W: np.ndarray  # (p, k)
    weights: list[np.ndarray]  # per layer, (k, out, in)
    biases: list[np.ndarray]  # per layer, (k, out)
    norm_mean: np.ndarray  # (k,)
    norm_std: np.ndarray  # (k,)
    link: str = "identity"
    activation: str = "tanh"
    norm_eps: float = 1e-5
    active: np.ndarray | None = None  # (k,) bool; False once pruned
    prune_threshold: float | None = None
    hparams: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mu = float(self.mu)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.W = np.asarray(self.W, dtype=float)
        k = self.beta.shape[0]
        if self.W.ndim != 2 or self.W.shape[1] != k:
            raise ShapeError(f"W must be p x {k}, got {self.W.shape}")
        if self.active is None:
            self.active = np.ones(k, dtype=bool)
        self.active = np.asarray(self.active, dtype=bool)
        self.norm_mean = np.asarray(self.norm_mean, dtype=float).reshape(-1)
        self.norm_std = np.asarray(self.norm_std, dtype=float).reshape(-1)
        for arr in (self.norm_mean, self.norm_std, self.active):
            if arr.shape != (k,):
                raise ShapeError(f"per-subnetwork arrays must have length {k}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty and of equal length")
        if self.link not in LINKS:
            raise ConfigError(f"link must be one of {LINKS}, got {self.link!r}")

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.beta.shape[0]

    @property
    def subnets(self) -> list[Subnetwork]:
        return [
            Subnetwork(
                [DenseLayer(w[j], b[j]) for w, b in zip(self.weights, self.biases)],
                self.activation,
            )
            for j in range(self.k)
        ]

    @property
    def norm(self) -> list[NormState]:
        return [
            NormState(float(m), float(s), self.norm_eps)
            for m, s in zip(self.norm_mean, self.norm_std)
        ]

    def copy(self) -> "XnnModel":
        return copy.deepcopy(self)

    @classmethod
    def from_subnets(cls, mu, beta, W, subnets: list[Subnetwork],
                     norm: list[NormState] | None = None, link: str = "identity") -> "XnnModel":
        """Assemble a model from per-subnetwork pieces (all with the same shape)."""
        if not subnets:
            raise ShapeError("need at least one subnetwork")
        shapes = [[l.weights.shape for l in s.layers] for s in subnets]
        if any(sh != shapes[0] for sh in shapes):
            raise ShapeError("all subnetworks must share one architecture")
        acts = {s.activation for s in subnets}
        if len(acts) != 1:
            raise ConfigError("all subnetworks must share one activation")
        n_layers = len(subnets[0].layers)
        weights = [np.stack([s.layers[l].weights for s in subnets]) for l in range(n_layers)]
        biases = [np.stack([s.layers[l].biases for s in subnets]) for l in range(n_layers)]
        k = len(subnets)
        norm = norm or [NormState() for _ in range(k)]
        return cls(
            mu=mu, beta=beta, W=W, weights=weights, biases=biases,
            norm_mean=[ns.mean for ns in norm], norm_std=[ns.std for ns in norm],
            link=link, activation=acts.pop(), norm_eps=norm[0].epsilon,
        )


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def orthonormal_columns(A: np.ndarray) -> np.ndarray:
    """Q factor of ``A`` with the sign convention diag(R) >= 0."""
    Q, R = np.linalg.qr(A)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def init_model(p: int, hp: Hyperparams, rng: np.random.Generator) -> XnnModel:
    if p < 1:
        raise ConfigError(f"feature count must be >= 1, got {p}")
    k = hp.k if hp.k is not None else (p if hp.gam_mode else min(p, 10))
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > p:
        raise ConfigError(f"k={k} exceeds the feature count p={p}")
    if hp.gam_mode:
        if k != p:
            raise ConfigError(f"gam_mode needs k == p, got k={k}, p={p}")
        W = np.eye(p)
    else:
        W = orthonormal_columns(rng.standard_normal((p, k)))
    widths = [1, *hp.hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        weights.append(_xavier(rng, (k, fan_out, fan_in), fan_in, fan_out))
        biases.append(np.zeros((k, fan_out)))
    beta = _xavier(rng, k, k, 1)
    return XnnModel(
        mu=0.0, beta=beta, W=W, weights=weights, biases=biases,
        norm_mean=np.zeros(k), norm_std=np.ones(k),
        link="logit" if hp.task == "classification" else "identity",
        activation=hp.activation, norm_eps=hp.norm_eps,
    )


def _check_X(model: XnnModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ShapeError(f"X must have {model.p} columns, got shape {X.shape}")
    return X


def project(model: XnnModel, X) -> np.ndarray:
    return _check_X(model, X) @ model.W


def _activate(a: np.ndarray, activation: str) -> np.ndarray:
    return np.tanh(a) if activation == "tanh" else a


def stacked_eval(weights, biases, activation: str, Z: np.ndarray) -> np.ndarray:
    """Evaluate all k subnetworks at once; ``Z`` is (n, k), result is (n, k)."""
    h = Z.T[:, :, None]
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w.transpose(0, 2, 1) + b[:, None, :]
        if l < last:
            h = _activate(h, activation)
    return h[:, :, 0].T


def subnet_eval(s: Subnetwork, z) -> np.ndarray:
    h = np.asarray(z, dtype=float).reshape(-1, 1)
    last = len(s.layers) - 1
    for l, layer in enumerate(s.layers):
        h = h @ layer.weights.T + layer.biases
        if l < last:
            h = _activate(h, s.activation)
    return h[:, 0]


def normalize(h, ns: NormState) -> np.ndarray:
    return (np.asarray(h, dtype=float) - ns.mean) / max(ns.std, ns.epsilon)


def raw_outputs(model: XnnModel, X) -> np.ndarray:
    """Unnormalized subnetwork outputs, shape (n, k)."""
    return stacked_eval(model.weights, model.biases, model.activation, project(model, X))


def ridge_outputs(model: XnnModel, X) -> np.ndarray:
    """Normalized ridge function values h~_j(w_j^T x), shape (n, k)."""
    std = np.maximum(model.norm_std, model.norm_eps)
    return (raw_outputs(model, X) - model.norm_mean) / std


def linear_predictor(model: XnnModel, X) -> np.ndarray:
    """eta = mu + sum_j beta_j h~_j(w_j^T x), before the inverse link."""
    return model.mu + ridge_outputs(model, X) @ model.beta


def sigmoid(eta):
    return np.exp(-np.logaddexp(0.0, -np.asarray(eta, dtype=float)))


def forward(model: XnnModel, X) -> np.ndarray:
    """Mean response: eta for the identity link, P(y=1|x) for the logit link."""
    eta = linear_predictor(model, X)
    return eta if model.link == "identity" else sigmoid(eta)


def importance_ratios(beta) -> np.ndarray:
    a = np.abs(np.asarray(beta, dtype=float))
    total = a.sum()
    if not total > 0:
        raise DegenerateError("importance ratios undefined: all scales are zero")
    return a / total


def flip_subnet(model: XnnModel, j: int) -> None:
    """Negate beta_j together with h~_j in place; predictions are unchanged."""
    model.beta[j] = -model.beta[j]
    model.weights[-1][j] = -model.weights[-1][j]
    model.biases[-1][j] = -model.biases[-1][j]
    model.norm_mean[j] = -model.norm_mean[j]


def flip_projection(model: XnnModel, j: int) -> None:
    """Negate w_j and the subnetwork's input weights in place (z -> -z)."""
    model.W[:, j] = -model.W[:, j]
    model.weights[0][j] = -model.weights[0][j]


def canonicalize_signs(model: XnnModel) -> XnnModel:
    """Prediction-equivalent copy with every beta_j >= 0 and the
    largest-magnitude entry of every w_j positive."""
    out = model.copy()
    for j in np.flatnonzero(out.beta < 0):
        flip_subnet(out, int(j))
    lead = out.W[np.argmax(np.abs(out.W), axis=0), np.arange(out.k)]
    for j in np.flatnonzero(lead < 0):
        flip_projection(out, int(j))
    return out


def ortho_residual(W: np.ndarray) -> float:
    return float(np.linalg.norm(W.T @ W - np.eye(W.shape[1])))


# serialization

def to_dict(model: XnnModel, hp: Hyperparams | dict | None = None) -> dict:
    if isinstance(hp, Hyperparams):
        hp = hp.to_dict()
    return {
        "version": MODEL_VERSION,
        "link": model.link,
        "activation": model.activation,
        "mu": model.mu,
        "beta": model.beta.tolist(),
        "W": {"rows": model.p, "cols": model.k, "data": model.W.reshape(-1).tolist()},
        "subnets": [
            {
                "layers": [
                    {"weights": layer.weights.tolist(), "biases": layer.biases.tolist()}
                    for layer in s.layers
                ],
            }
            for s in model.subnets
        ],
        "norm": [
            {"mean": ns.mean, "std": ns.std, "epsilon": ns.epsilon} for ns in model.norm
        ],
        "active": model.active.tolist(),
        "prune_threshold": model.prune_threshold,
        "hyperparams": hp if hp is not None else model.hparams,
    }


def from_dict(d: dict) -> XnnModel:
    if d.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported model version {d.get('version')!r}")
    Wd = d["W"]
    W = np.asarray(Wd["data"], dtype=float).reshape(Wd["rows"], Wd["cols"])
    subnets = [
        Subnetwork([DenseLayer(l["weights"], l["biases"]) for l in s["layers"]], d["activation"])
        for s in d["subnets"]
    ]
    norm = [NormState(n["mean"], n["std"], n["epsilon"]) for n in d["norm"]]
    model = XnnModel.from_subnets(d["mu"], d["beta"], W, subnets, norm, d["link"])
    model.active = np.asarray(d.get("active", [True] * model.k), dtype=bool)
    model.prune_threshold = d.get("prune_threshold")
    model.hparams = d.get("hyperparams")
    return model


def save_model(model: XnnModel, path, hp: Hyperparams | dict | None = None) -> None:
    Path(path).write_text(json.dumps(to_dict(model, hp), indent=1) + "\n")


def load_model(path) -> XnnModel:
    return from_dict(json.loads(Path(path).read_text()))
