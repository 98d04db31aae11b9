"""Deterministic feed-forward networks with manual backpropagation.

A Network is an extractor (stack of affine layers with relu or identity
activations) followed by a single expanding classification head over all
classes seen so far. Everything is float64 numpy; updates are functional
(sgd_step returns a new Network), so snapshots are plain references.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ShrinkError
from .rank_metrics import rfr_loss_and_grad

ACTIVATIONS = ("relu", "identity")

REGULARIZERS = ("none", "rfr", "cwd")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("layer weight/bias shapes inconsistent")


@dataclass(frozen=True)
class Network:
    layers: tuple[Layer, ...]  # may be empty: features are the inputs
    head_weight: np.ndarray  # (num_classes, feature_dim)
    head_bias: np.ndarray  # (num_classes,)

    def __post_init__(self):
        dim = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.weight.shape[1] != dim:
                raise DimensionError(f"layer {i} expects input {layer.weight.shape[1]}, got {dim}")
            dim = layer.weight.shape[0]
        if self.head_weight.shape[1] != dim:
            raise DimensionError(
                f"head expects feature dim {self.head_weight.shape[1]}, extractor gives {dim}"
            )

    @property
    def input_dim(self) -> int:
        if self.layers:
            return self.layers[0].weight.shape[1]
        return self.head_weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.head_weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.head_weight.shape[0]


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray  # (N, input_dim)
    labels: np.ndarray  # (N,) int class ids, already mapped to head rows

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise DimensionError("batch inputs/labels shapes inconsistent")


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float
    seed: int
    lr_decay: float = 1.0  # multiplicative step decay factor
    lr_decay_every: int = 0  # 0 disables decay


@dataclass
class LossGrads:
    loss_ce: float
    loss_reg: float
    loss_distill: float
    grads: dict[str, np.ndarray]

    @property
    def loss_total(self) -> float:
        return self.loss_ce + self.loss_reg_scaled + self.loss_distill_scaled

    loss_reg_scaled: float = field(default=0.0)
    loss_distill_scaled: float = field(default=0.0)


def he_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = np.sqrt(6.0 / in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def init_network(
    input_dim: int,
    hidden_dims: list[int],
    feature_dim: int,
    num_classes: int,
    rng: np.random.Generator,
) -> Network:
    """He-uniform initialized MLP extractor plus dot-product head.

    Hidden layers use relu; the final feature layer is linear so raw
    features are generically nonzero (the rank loss cannot normalize a
    zero row). Biases start at zero.
    """
    dims = [input_dim] + list(hidden_dims) + [feature_dim]
    layers = []
    for i in range(len(dims) - 1):
        act = "relu" if i < len(dims) - 2 else "identity"
        layers.append(
            Layer(
                weight=he_uniform(rng, dims[i + 1], dims[i]),
                bias=np.zeros(dims[i + 1]),
                activation=act,
            )
        )
    return Network(
        layers=tuple(layers),
        head_weight=he_uniform(rng, num_classes, feature_dim),
        head_bias=np.zeros(num_classes),
    )


def param_dict(net: Network) -> dict[str, np.ndarray]:
    """Flat name -> array view of all parameters."""
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"layer{i}.weight"] = layer.weight
        out[f"layer{i}.bias"] = layer.bias
    out["head.weight"] = net.head_weight
    out["head.bias"] = net.head_bias
    return out


def _with_params(net: Network, params: dict[str, np.ndarray]) -> Network:
    layers = tuple(
        replace(layer, weight=params[f"layer{i}.weight"], bias=params[f"layer{i}.bias"])
        for i, layer in enumerate(net.layers)
    )
    return Network(layers=layers, head_weight=params["head.weight"], head_bias=params["head.bias"])


def _forward_cached(net: Network, X: np.ndarray):
    """Forward pass keeping layer inputs and pre-activations for backward."""
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionError(f"inputs of dim {X.shape} do not match network input {net.input_dim}")
    caches = []  # (layer_input, pre_activation)
    h = X
    for layer in net.layers:
        pre = h @ layer.weight.T + layer.bias
        caches.append((h, pre))
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    logits = h @ net.head_weight.T + net.head_bias
    return caches, h, logits


def forward(net: Network, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Return (features, logits) for a batch of inputs."""
    X = np.asarray(inputs, dtype=np.float64)
    _, features, logits = _forward_cached(net, X)
    return features, logits


def _log_softmax(Z: np.ndarray) -> np.ndarray:
    shifted = Z - Z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cwd_loss_and_grad(features: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Class-wise decorrelation penalty and its exact feature gradient.

    Per class with >= 2 samples in the batch: row-normalize that class's
    features, center them, and penalize the mean squared entry of their
    scaled feature Gram K_c = X^T X / n_c. Classes with fewer than 2
    samples are skipped; the result is the mean over counted classes.
    """
    n, d = features.shape
    grad = np.zeros_like(features)
    losses = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            continue
        rows = features[idx]
        norms = np.linalg.norm(rows, axis=1)
        from .errors import ZeroRowError
        from .linalg import MIN_ROW_NORM

        bad = np.flatnonzero(norms < MIN_ROW_NORM)
        if bad.size:
            raise ZeroRowError(int(idx[bad[0]]), float(norms[bad[0]]))
        Xn = rows / norms[:, None]
        centered = Xn - Xn.mean(axis=0)
        nc = idx.size
        K = centered.T @ centered / nc
        losses.append(float(np.sum(K * K)) / d**2)
        dK = 2.0 * K / d**2
        dcentered = (2.0 / nc) * centered @ dK
        dXn = dcentered - dcentered.mean(axis=0)
        radial = np.sum(Xn * dXn, axis=1, keepdims=True)
        grad[idx] = (dXn - radial * Xn) / norms[:, None]
    if not losses:
        return 0.0, grad
    return float(np.mean(losses)), grad / len(losses)


def loss_and_backward(
    net: Network,
    batch: Batch,
    alpha: float = 0.0,
    regularizer: str = "none",
    teacher: Network | None = None,
    distill_weight: float = 0.0,
    distill_temperature: float = 2.0,
    distill_classes: int = 0,
) -> LossGrads:
    """Cross-entropy plus optional feature regularizer and distillation.

    Returns the exact gradient of
        L = L_ce + alpha * L_reg + distill_weight * L_kd
    with respect to every parameter. loss_ce/loss_reg/loss_distill are the
    unscaled component values. The rank regularizer requires batch size
    strictly greater than the feature dimension.
    """
    if regularizer not in REGULARIZERS:
        raise ValueError(f"unknown regularizer {regularizer!r}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    X = np.asarray(batch.inputs, dtype=np.float64)
    y = batch.labels
    n = X.shape[0]
    if n == 0:
        raise DimensionError("empty batch")
    if np.any(y < 0) or np.any(y >= net.num_classes):
        raise DimensionError(f"labels outside [0, {net.num_classes})")
    if regularizer == "rfr" and alpha > 0 and n <= net.feature_dim:
        raise DimensionError(
            f"rank regularizer needs batch size > feature dim, got {n} <= {net.feature_dim}"
        )
    caches, features, logits = _forward_cached(net, X)

    logp = _log_softmax(logits)
    loss_ce = float(-logp[np.arange(n), y].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    loss_kd = 0.0
    if teacher is not None and distill_weight > 0.0 and distill_classes > 0:
        _, teacher_logits = forward(teacher, X)
        tau = distill_temperature
        q = np.exp(_log_softmax(teacher_logits[:, :distill_classes] / tau))
        logp_s = _log_softmax(logits[:, :distill_classes] / tau)
        loss_kd = float(-(q * logp_s).sum(axis=1).mean())
        dlogits[:, :distill_classes] += distill_weight * (np.exp(logp_s) - q) / (n * tau)

    dfeatures = dlogits @ net.head_weight
    loss_reg = 0.0
    if alpha > 0 and regularizer == "rfr":
        reg = rfr_loss_and_grad(features)
        loss_reg = reg.loss
        dfeatures = dfeatures + alpha * reg.grad_H
    elif alpha > 0 and regularizer == "cwd":
        loss_reg, reg_grad = cwd_loss_and_grad(features, y)
        dfeatures = dfeatures + alpha * reg_grad

    grads: dict[str, np.ndarray] = {
        "head.weight": dlogits.T @ features,
        "head.bias": dlogits.sum(axis=0),
    }
    dh = dfeatures
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        layer_input, pre = caches[i]
        dpre = dh * (pre > 0.0) if layer.activation == "relu" else dh
        grads[f"layer{i}.weight"] = dpre.T @ layer_input
        grads[f"layer{i}.bias"] = dpre.sum(axis=0)
        dh = dpre @ layer.weight
    return LossGrads(
        loss_ce=loss_ce,
        loss_reg=loss_reg,
        loss_distill=loss_kd,
        grads=grads,
        loss_reg_scaled=alpha * loss_reg,
        loss_distill_scaled=distill_weight * loss_kd,
    )


def sgd_step(
    net: Network,
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    velocity: dict[str, np.ndarray],
) -> tuple[Network, dict[str, np.ndarray]]:
    """Momentum SGD: v <- momentum*v + g, w <- w - lr*v.

    Only parameters with an entry in grads are updated (the rest keep
    their exact values), which is how head-only training freezes the
    extractor. Returns the updated network and velocity.
    """
    params = dict(param_dict(net))
    new_velocity = dict(velocity)
    for key, g in grads.items():
        v = momentum * velocity.get(key, 0.0) + g
        new_velocity[key] = v
        updated = params[key] - lr * v
        if not np.all(np.isfinite(updated)):
            raise ArithmeticError(f"parameter {key} became non-finite during update")
        params[key] = updated
    return _with_params(net, params), new_velocity


def expand_head(
    net: Network,
    new_class_count: int,
    scheme: str = "zeros",
    rng: np.random.Generator | None = None,
) -> Network:
    """Grow the head to new_class_count rows, preserving old rows bit-exactly.

    scheme "zeros" keeps new logits at 0 until trained; "he_uniform"
    draws new rows from the provided seeded generator.
    """
    old = net.num_classes
    if new_class_count <= old:
        raise ShrinkError(f"cannot shrink/keep head: {old} -> {new_class_count}")
    extra = new_class_count - old
    if scheme == "zeros":
        new_w = np.zeros((extra, net.feature_dim))
    elif scheme == "he_uniform":
        if rng is None:
            raise ValueError("he_uniform head expansion needs an rng")
        new_w = he_uniform(rng, extra, net.feature_dim)
    else:
        raise ValueError(f"unknown head init scheme {scheme!r}")
    return Network(
        layers=net.layers,
        head_weight=np.vstack([net.head_weight, new_w]),
        head_bias=np.concatenate([net.head_bias, np.zeros(extra)]),
    )


def _replay_mix(
    bx: np.ndarray,
    by: np.ndarray,
    store_inputs: np.ndarray,
    store_labels: np.ndarray,
    count: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    replace_draw = store_inputs.shape[0] < count
    idx = rng.choice(store_inputs.shape[0], size=count, replace=replace_draw)
    return np.vstack([bx, store_inputs[idx]]), np.concatenate([by, store_labels[idx]])


def fit(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    schedule: TrainSchedule,
    rng: np.random.Generator,
    alpha: float = 0.0,
    regularizer: str = "none",
    head_only: bool = False,
    teacher: Network | None = None,
    distill_weight: float = 0.0,
    distill_temperature: float = 2.0,
    distill_classes: int = 0,
    replay_store: tuple[np.ndarray, np.ndarray] | None = None,
) -> Network:
    """Run the full SGD schedule and return the trained network.

    Batches are drawn by per-epoch shuffling; a trailing partial batch is
    dropped (the whole set is one batch when it is smaller than
    batch_size). With a nonempty replay_store each batch is 50% fresh
    data and 50% store samples, drawn with replacement only when the
    store is smaller than the half-batch.
    """
    X = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise DimensionError("cannot fit on an empty dataset")
    velocity: dict[str, np.ndarray] = {}
    lr = schedule.learning_rate
    mixing = replay_store is not None and replay_store[0].shape[0] > 0
    replay_count = schedule.batch_size // 2 if mixing else 0
    fresh = schedule.batch_size - replay_count
    head_keys = {"head.weight", "head.bias"}
    for epoch in range(schedule.epochs):
        if schedule.lr_decay_every and epoch and epoch % schedule.lr_decay_every == 0:
            lr *= schedule.lr_decay
        perm = rng.permutation(n)
        if n <= fresh:
            starts = [0]
            size = n
        else:
            starts = range(0, n - fresh + 1, fresh)
            size = fresh
        for start in starts:
            idx = perm[start : start + size]
            bx, by = X[idx], y[idx]
            if mixing:
                bx, by = _replay_mix(bx, by, replay_store[0], replay_store[1], replay_count, rng)
            result = loss_and_backward(
                net,
                Batch(bx, by),
                alpha=alpha,
                regularizer=regularizer,
                teacher=teacher,
                distill_weight=distill_weight,
                distill_temperature=distill_temperature,
                distill_classes=distill_classes,
            )
            grads = result.grads
            if head_only:
                grads = {k: v for k, v in grads.items() if k in head_keys}
            net, velocity = sgd_step(net, grads, lr, schedule.momentum, velocity)
    return net


def save_checkpoint(net: Network, path, seed: int | None = None) -> None:
    """JSON checkpoint with full 64-bit float round-trip."""
    doc = {
        "layers": [
            {
                "out_dim": int(l.weight.shape[0]),
                "in_dim": int(l.weight.shape[1]),
                "activation": l.activation,
                "weight": [float(v) for v in l.weight.ravel()],
                "bias": [float(v) for v in l.bias],
            }
            for l in net.layers
        ],
        "head": {
            "num_classes": net.num_classes,
            "feature_dim": net.feature_dim,
            "weight": [float(v) for v in net.head_weight.ravel()],
            "bias": [float(v) for v in net.head_bias],
        },
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    layers = tuple(
        Layer(
            weight=np.array(spec["weight"], dtype=np.float64).reshape(
                spec["out_dim"], spec["in_dim"]
            ),
            bias=np.array(spec["bias"], dtype=np.float64),
            activation=spec["activation"],
        )
        for spec in doc["layers"]
    )
    head = doc["head"]
    return Network(
        layers=layers,
        head_weight=np.array(head["weight"], dtype=np.float64).reshape(
            head["num_classes"], head["feature_dim"]
        ),
        head_bias=np.array(head["bias"], dtype=np.float64),
    )
