"""Desk-scale trainable models: softmax classifiers and mean/variance
vector-field regressors, trained with hand-written backprop.

Training is plain mini-batch gradient descent with momentum 0.9 and
global-norm gradient clipping; everything is seeded, single-threaded
numpy, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .groups import FiniteGroup, WeightedDataset, _apply_all
from .metrics import BinTable, ece_binned, quantile_fibers, gence, \
    aleatoric_bleed, regression_error
from .rng import child_rng

N_ANGLE_SECTORS = 16


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


@dataclass
class MlpConfig:
    layer_widths: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "relu"            # relu | tanh
    seed: int = 0
    learning_rate: float = 0.05
    epochs: int = 300
    batch_size: int = 64
    invariant_mode: str = "none"        # none | drop-z | orbit-average
    momentum: float = 0.9
    clip_norm: float = 10.0

    def __post_init__(self):
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError("activation must be relu or tanh")
        if self.invariant_mode not in ("none", "drop-z", "orbit-average"):
            raise ValueError("unknown invariant mode")


# -- bare multilayer perceptron -------------------------------------------------


class Mlp:
    """Fully connected net with a linear head; caches activations for backprop."""

    def __init__(self, sizes, activation, rng):
        self.activation = activation
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = math.sqrt(2.0 / fan_in) if activation == "relu" \
                else math.sqrt(1.0 / fan_in)
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            self.biases.append(np.zeros(fan_out))

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, a):
        return (z > 0).astype(float) if self.activation == "relu" else 1.0 - a * a

    def forward(self, x):
        pre, post = [], [x]
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = z if i == len(self.weights) - 1 else self._act(z)
            post.append(a)
        return (pre, post), a

    def backward(self, cache, d_out):
        pre, post = cache
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = d_out
        for i in reversed(range(len(self.weights))):
            if i != len(self.weights) - 1:
                delta = delta * self._act_grad(pre[i], post[i + 1])
            grads_w[i] = post[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return grads_w, grads_b, delta

    def params(self):
        return self.weights + self.biases


class MomentumOptimizer:
    def __init__(self, params, lr, momentum=0.9, clip_norm=10.0):
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        total = math.sqrt(sum(float((g * g).sum()) for g in grads))
        scale = 1.0 if total <= self.clip_norm else self.clip_norm / total
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v -= self.lr * scale * g
            p += v


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def stratified_split(labels, rng, train_frac=0.8):
    """Per-class shuffled 80/20 split; returns (train_idx, test_idx)."""
    train, test = [], []
    for y in np.unique(labels):
        idx = np.flatnonzero(labels == y)
        idx = idx[rng.permutation(len(idx))]
        cut = max(1, int(round(train_frac * len(idx))))
        cut = min(cut, len(idx) - 1) if len(idx) > 1 else cut
        train.extend(idx[:cut])
        test.extend(idx[cut:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


# -- classification ---------------------------------------------------------------


@dataclass
class TrainedClassifier:
    mlp: Mlp
    cfg: MlpConfig
    classes: np.ndarray
    group: FiniteGroup | None
    train_idx: np.ndarray
    test_idx: np.ndarray
    final_loss: float

    def _features(self, points):
        if self.cfg.invariant_mode == "drop-z":
            return points[:, :-1]
        return points

    def _logits(self, points):
        if self.cfg.invariant_mode == "orbit-average":
            total = None
            for g in self.group.elements:
                _, out = self.mlp.forward(self._features(_apply_all(self.group, g, points)))
                total = out if total is None else total + out
            return total / self.group.order
        _, out = self.mlp.forward(self._features(points))
        return out

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        """(predicted labels, confidences) for a batch of points."""
        probs = _softmax(self._logits(np.asarray(points, dtype=float)))
        idx = probs.argmax(axis=1)
        return self.classes[idx], probs[np.arange(len(probs)), idx]


def train_classifier(ds: WeightedDataset, cfg: MlpConfig,
                     group: FiniteGroup | None = None) -> TrainedClassifier:
    """Fit a softmax classifier; deterministic given (dataset, cfg.seed)."""
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    if cfg.invariant_mode == "orbit-average" and group is None:
        raise ValueError("orbit-average mode needs a group")
    classes = np.unique(ds.labels)
    y = np.searchsorted(classes, ds.labels)
    rng = child_rng(cfg.seed, "classifier")
    train_idx, test_idx = stratified_split(ds.labels, rng)

    in_dim = ds.points.shape[1] - (1 if cfg.invariant_mode == "drop-z" else 0)
    mlp = Mlp([in_dim] + list(cfg.layer_widths) + [len(classes)],
              cfg.activation, rng)
    opt = MomentumOptimizer(mlp.params(), cfg.learning_rate, cfg.momentum,
                            cfg.clip_norm)
    model = TrainedClassifier(mlp=mlp, cfg=cfg, classes=classes, group=group,
                              train_idx=train_idx, test_idx=test_idx,
                              final_loss=math.nan)
    x_all = ds.points
    last = math.nan
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            xb, yb = x_all[batch], y[batch]
            losses.append(_classifier_step(model, opt, xb, yb))
        last = float(np.mean(losses))
        if not math.isfinite(last):
            raise TrainingDivergedError(epoch)
    model.final_loss = last
    return model


def classifier_loss_and_grads(model: TrainedClassifier, xb, yb):
    """Cross-entropy loss and parameter gradients on one batch."""
    cfg, mlp = model.cfg, model.mlp
    onehot = np.eye(len(model.classes))[yb]
    if cfg.invariant_mode == "orbit-average":
        group = model.group
        caches, outs = [], []
        for g in group.elements:
            cache, out = mlp.forward(model._features(_apply_all(group, g, xb)))
            caches.append(cache)
            outs.append(out)
        logits = sum(outs) / group.order
        probs = _softmax(logits)
        loss = -np.mean(np.log(probs[np.arange(len(yb)), yb] + 1e-300))
        d_logits = (probs - onehot) / len(yb)
        grads_w = [np.zeros_like(w) for w in mlp.weights]
        grads_b = [np.zeros_like(b) for b in mlp.biases]
        for cache in caches:
            gw, gb, _ = mlp.backward(cache, d_logits / group.order)
            for acc, g in zip(grads_w, gw):
                acc += g
            for acc, g in zip(grads_b, gb):
                acc += g
    else:
        cache, logits = mlp.forward(model._features(xb))
        probs = _softmax(logits)
        loss = -np.mean(np.log(probs[np.arange(len(yb)), yb] + 1e-300))
        d_logits = (probs - onehot) / len(yb)
        grads_w, grads_b, _ = mlp.backward(cache, d_logits)
    return float(loss), grads_w + grads_b


def _classifier_step(model: TrainedClassifier, opt, xb, yb) -> float:
    loss, grads = classifier_loss_and_grads(model, xb, yb)
    opt.step(model.mlp.params(), grads)
    return loss


@dataclass(frozen=True)
class ClassifierEval:
    accuracy: float
    ece: float
    bin_table: BinTable


def evaluate_classifier(model: TrainedClassifier, ds: WeightedDataset,
                        n_bins: int = 100, indices=None) -> ClassifierEval:
    """Weighted accuracy and binned ECE on the given index subset."""
    if indices is None:
        indices = np.arange(len(ds))
    indices = np.asarray(indices, dtype=int)
    pred, conf = model.predict(ds.points[indices])
    truth = ds.labels[indices]
    w = ds.weights[indices]
    w = w / w.sum()
    accuracy = float((w * (pred == truth)).sum())
    ece, table = ece_binned(conf, pred, truth, weights=w, n_bins=n_bins)
    return ClassifierEval(accuracy=accuracy, ece=ece, bin_table=table)


# -- mean/variance vector-field regression ----------------------------------------


@dataclass
class TrainedRegressor:
    kind: str                            # unconstrained | radial_equivariant
    mean_net: Mlp
    var_net: Mlp
    cfg: MlpConfig
    beta_exp: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    final_loss: float

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        """(mean vectors, positive variance vectors) for a batch of points."""
        x = np.asarray(points, dtype=float)
        if self.kind == "radial_equivariant":
            r = np.linalg.norm(x, axis=1, keepdims=True)
            _, g = self.mean_net.forward(r)
            _, raw = self.var_net.forward(r)
            mean = g * x
            var = np.repeat(_softplus(raw), x.shape[1], axis=1)
        else:
            _, mean = self.mean_net.forward(x)
            _, raw = self.var_net.forward(x)
            var = _softplus(raw)
        return mean, var


def train_vector_regressor(ds: WeightedDataset, model_kind: str, cfg: MlpConfig,
                           beta_exp: float = 1.0,
                           var_bias_init: float = -2.0) -> TrainedRegressor:
    """Fit mean and variance heads with loss 1/2 MSE + 1/2 beta-NLL.

    ``radial_equivariant`` predicts mean g(|x|) x (exactly equivariant to
    rotations) and an isotropic variance s(|x|); ``unconstrained`` maps
    coordinates straight to per-component mean and variance.
    """
    if ds.targets is None:
        raise ValueError("dataset has no targets")
    if model_kind not in ("unconstrained", "radial_equivariant"):
        raise ValueError(f"unknown model kind {model_kind!r}")
    rng = child_rng(cfg.seed, "regressor", model_kind)
    n = len(ds)
    perm = rng.permutation(n)
    cut = max(1, int(round(0.8 * n)))
    train_idx, test_idx = np.sort(perm[:cut]), np.sort(perm[cut:])

    m = ds.targets.shape[1]
    if model_kind == "radial_equivariant":
        mean_net = Mlp([1] + list(cfg.layer_widths) + [1], cfg.activation, rng)
        var_net = Mlp([1] + list(cfg.layer_widths) + [1], cfg.activation, rng)
    else:
        d = ds.points.shape[1]
        mean_net = Mlp([d] + list(cfg.layer_widths) + [m], cfg.activation, rng)
        var_net = Mlp([d] + list(cfg.layer_widths) + [m], cfg.activation, rng)
    var_net.biases[-1][:] = var_bias_init
    params = mean_net.params() + var_net.params()
    opt = MomentumOptimizer(params, cfg.learning_rate, cfg.momentum, cfg.clip_norm)

    model = TrainedRegressor(kind=model_kind, mean_net=mean_net, var_net=var_net,
                             cfg=cfg, beta_exp=beta_exp, train_idx=train_idx,
                             test_idx=test_idx, final_loss=math.nan)
    last = math.nan
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            losses.append(_regressor_step(model, opt, ds.points[batch],
                                          ds.targets[batch]))
        last = float(np.mean(losses))
        if not math.isfinite(last):
            raise TrainingDivergedError(epoch)
    model.final_loss = last
    return model


def regressor_loss_and_grads(model: TrainedRegressor, xb, yb,
                             factor_override=None):
    """Combined 1/2 MSE + 1/2 beta-NLL loss and parameter gradients.

    ``factor_override`` freezes the stop-gradient weighting at a given
    value (used by finite-difference checks, which must hold it constant).
    """
    mean_net, var_net, beta_exp = model.mean_net, model.var_net, model.beta_exp
    batch, m = yb.shape
    denom = batch * m
    if model.kind == "radial_equivariant":
        r = np.linalg.norm(xb, axis=1, keepdims=True)
        mean_cache, g = mean_net.forward(r)
        var_cache, raw = var_net.forward(r)
        mu = g * xb
        s = np.repeat(_softplus(raw), m, axis=1)
    else:
        mean_cache, mu = mean_net.forward(xb)
        var_cache, raw = var_net.forward(xb)
        s = _softplus(raw)

    res = mu - yb
    factor = s ** beta_exp if factor_override is None else factor_override
    mse = float((res * res).sum()) / denom
    bnll = float((factor * (0.5 * np.log(s) + res * res / (2.0 * s))).sum()) / denom
    loss = 0.5 * mse + 0.5 * bnll

    d_mu = (res + 0.5 * factor * res / s) / denom
    d_s = 0.5 * factor * (0.5 / s - res * res / (2.0 * s * s)) / denom

    if model.kind == "radial_equivariant":
        d_g = (d_mu * xb).sum(axis=1, keepdims=True)
        d_raw = d_s.sum(axis=1, keepdims=True) * _sigmoid(raw)
    else:
        d_g = d_mu
        d_raw = d_s * _sigmoid(raw)
    gw1, gb1, _ = mean_net.backward(mean_cache, d_g)
    gw2, gb2, _ = var_net.backward(var_cache, d_raw)
    return loss, gw1 + gb1 + gw2 + gb2


def _regressor_step(model: TrainedRegressor, opt, xb, yb) -> float:
    loss, grads = regressor_loss_and_grads(model, xb, yb)
    opt.step(model.mean_net.params() + model.var_net.params(), grads)
    return loss


@dataclass(frozen=True)
class AngleRow:
    sector: int
    angle_lo: float
    angle_hi: float
    count: int
    mse: float
    beta_nll: float


@dataclass(frozen=True)
class RegressorEval:
    mse: float
    gence: float
    bleed: float
    per_angle: tuple[AngleRow, ...]


def per_angle_losses(points, means, variances, targets,
                     n_sectors: int = N_ANGLE_SECTORS) -> tuple[AngleRow, ...]:
    """MSE and beta-NLL (beta = 1) per angular sector of the input plane."""
    angles = np.arctan2(points[:, 1], points[:, 0])
    sector = np.minimum(((angles + math.pi) / (2 * math.pi) * n_sectors).astype(int),
                        n_sectors - 1)
    res = means - targets
    bnll_sample = (variances * (0.5 * np.log(variances)
                                + res * res / (2.0 * variances))).mean(axis=1)
    sq = (res * res).sum(axis=1)
    rows = []
    for k in range(n_sectors):
        lo = -math.pi + 2 * math.pi * k / n_sectors
        hi = -math.pi + 2 * math.pi * (k + 1) / n_sectors
        sel = sector == k
        if sel.any():
            rows.append(AngleRow(k, lo, hi, int(sel.sum()),
                                 float(sq[sel].mean()), float(bnll_sample[sel].mean())))
        else:
            rows.append(AngleRow(k, lo, hi, 0, math.nan, math.nan))
    return tuple(rows)


def evaluate_regressor(model: TrainedRegressor, ds: WeightedDataset,
                       indices=None) -> RegressorEval:
    """MSE, dispersion score, aleatoric bleed, and the per-angle loss table.

    The ground-truth fields are deterministic, so the true aleatoric
    variance is identically zero and the bleed is the weighted mean
    squared norm of the predicted variance vectors.
    """
    if indices is None:
        indices = np.arange(len(ds))
    indices = np.asarray(indices, dtype=int)
    pts, targets = ds.points[indices], ds.targets[indices]
    w = ds.weights[indices]
    means, variances = model.predict(pts)
    mse = regression_error(means, targets, w)
    fibers = quantile_fibers(variances, k=10, weights=w)
    score = gence(means, variances, targets, weights=w, fibers=fibers)
    bleed = aleatoric_bleed(variances, weights=w)
    return RegressorEval(mse=mse, gence=score, bleed=bleed,
                         per_angle=per_angle_losses(pts, means, variances, targets))
