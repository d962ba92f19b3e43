"""Small feed-forward network trained with Adam and early stopping.

The network optionally starts with a block-diagonal linear sub-layer that maps
each variable group to a low-dimensional summary: group k's columns connect
only to their own d_k projection units, with no bias and no activation, and
the projection weights train jointly with the dense stack. Uncovered columns
bypass the sub-layer unchanged. Hidden layers are ReLU; the output is a single
linear unit (a logit for the binary task).

All gradients are computed analytically; ``loss_and_grads`` exposes them so
they can be audited against finite differences.
"""

import numpy as np

from .errors import DegenerateOutcome, NonFiniteLoss, ShapeMismatch
from .types import BINARY, REGRESSION, derive_seed


def relu(z):
    return np.maximum(z, 0.0)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


class StackingLayout:
    """Column bookkeeping for the projection sub-layer."""

    def __init__(self, spec, dims, n_inputs):
        self.group_cols = [np.asarray(g, dtype=int) for g in spec.groups]
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) != len(self.group_cols):
            raise ValueError("need one projected dimension per group")
        for cols, d in zip(self.group_cols, self.dims):
            if not 1 <= d <= len(cols):
                raise ValueError(
                    f"projected dimension {d} invalid for a group of {len(cols)}"
                )
        self.uncovered = np.asarray(spec.uncovered(n_inputs), dtype=int)
        offsets = np.cumsum([0] + list(self.dims))
        self.blocks = [slice(offsets[k], offsets[k + 1]) for k in range(len(self.dims))]
        self.n_outputs = int(offsets[-1]) + len(self.uncovered)


class MlpNetwork:
    """Parameter container with forward and backward passes."""

    def __init__(self, n_inputs, hidden_layers, task, seed, layout=None):
        self.task = task
        self.layout = layout
        rng = np.random.default_rng(seed)
        self.projections = None
        width_in = n_inputs
        if layout is not None:
            self.projections = [
                rng.normal(0.0, 1.0 / np.sqrt(len(cols)), size=(len(cols), d))
                for cols, d in zip(layout.group_cols, layout.dims)
            ]
            width_in = layout.n_outputs
        self.weights = []
        self.biases = []
        widths = list(hidden_layers) + [1]
        for layer, width in enumerate(widths):
            if layer == len(widths) - 1:
                # zero output layer: the net starts at the (standardized) mean
                self.weights.append(np.zeros((width_in, width)))
            else:
                scale = np.sqrt(2.0 / width_in)
                self.weights.append(rng.normal(0.0, scale, size=(width_in, width)))
            self.biases.append(np.zeros(width))
            width_in = width

    def parameters(self):
        """All trainable arrays: projections first, then (W, b) per layer."""
        params = list(self.projections) if self.projections is not None else []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def project(self, x):
        """Apply the sub-layer: per-group x @ U_k blocks, then uncovered columns."""
        if self.projections is None:
            return x
        lay = self.layout
        parts = [x[:, cols] @ u for cols, u in zip(lay.group_cols, self.projections)]
        if lay.uncovered.size:
            parts.append(x[:, lay.uncovered])
        return np.concatenate(parts, axis=1)

    def forward_tail(self, z):
        """Dense stack applied to post-projection features."""
        a = z
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = relu(a @ w + b)
        return (a @ self.weights[-1] + self.biases[-1]).ravel()

    def forward(self, x):
        return self.forward_tail(self.project(x))

    def loss_and_grads(self, x, y):
        """Mean loss on a batch plus gradients aligned with ``parameters()``.

        Regression uses mean squared error on the raw output; binary uses the
        logistic loss on the output logit.
        """
        n = x.shape[0]
        z = self.project(x)
        activations = [z]
        pre = []
        a = z
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            s = a @ w + b
            pre.append(s)
            a = relu(s)
            activations.append(a)
        out = (a @ self.weights[-1] + self.biases[-1]).ravel()

        if self.task == REGRESSION:
            diff = out - y
            loss = float(np.mean(diff**2))
            dout = (2.0 / n) * diff
        else:
            loss = float(np.mean(np.logaddexp(0.0, out) - y * out))
            dout = (sigmoid(out) - y) / n

        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = dout[:, None]
        grad_w[-1] = activations[-1].T @ delta
        grad_b[-1] = delta.sum(axis=0)
        upstream = delta @ self.weights[-1].T
        for layer in range(len(self.weights) - 2, -1, -1):
            delta = upstream * (pre[layer] > 0)
            grad_w[layer] = activations[layer].T @ delta
            grad_b[layer] = delta.sum(axis=0)
            upstream = delta @ self.weights[layer].T

        grads = []
        if self.projections is not None:
            lay = self.layout
            for cols, block in zip(lay.group_cols, lay.blocks):
                grads.append(x[:, cols].T @ upstream[:, block])
        for gw, gb in zip(grad_w, grad_b):
            grads.extend((gw, gb))
        return loss, grads


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class MlpLearner:
    """A trained network plus the input/output scaling it was fit with."""

    def __init__(self, config, task, network, x_mean, x_std, y_mean, y_scale):
        self.config = config
        self.task = task
        self.network = network
        self.x_mean = x_mean
        self.x_std = x_std
        self.y_mean = y_mean
        self.y_scale = y_scale
        self.n_features = x_mean.shape[0]

    def transform_inputs(self, x):
        """The train-fold standardization, as applied before the first layer."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeMismatch(
                f"expected {self.n_features} columns, got {x.shape[1] if x.ndim == 2 else x.ndim}"
            )
        return (x - self.x_mean) / self.x_std

    def predict(self, x):
        return self._descale(self.network.forward(self.transform_inputs(x)))

    def predict_from_projection(self, z):
        """Run only the dense stack on already-projected features."""
        z = np.asarray(z, dtype=float)
        if z.shape[1] != self.network.weights[0].shape[0]:
            raise ShapeMismatch(
                f"expected {self.network.weights[0].shape[0]} projected columns, "
                f"got {z.shape[1]}"
            )
        return self._descale(self.network.forward_tail(z))

    def _descale(self, raw):
        if self.task == REGRESSION:
            return raw * self.y_scale + self.y_mean
        return raw


def fit_mlp(config, x, y, task, seed):
    """Train a network on (x, y); deterministic for a fixed seed.

    A 10% split of the training data is held back for early stopping; the
    parameters that achieved the best validation loss are restored at the end.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if task == BINARY and np.unique(y).size < 2:
        raise DegenerateOutcome("binary outcome is constant on the training fold")

    x_mean = x.mean(axis=0)
    x_std = x.std(axis=0)
    x_std[x_std < 1e-12] = 1.0
    xs = (x - x_mean) / x_std
    if task == REGRESSION:
        y_mean = float(y.mean())
        y_scale = float(y.std())
        if y_scale < 1e-12:
            y_scale = 1.0
        ys = (y - y_mean) / y_scale
    else:
        y_mean, y_scale = 0.0, 1.0
        ys = y

    layout = None
    if config.stacking is not None:
        dims = config.stacking.resolved_dims()
        layout = StackingLayout(config.stacking.spec, dims, p)

    rng = np.random.default_rng(derive_seed(seed, "mlp-train"))
    network = MlpNetwork(
        p, config.hidden_layers, task, derive_seed(seed, "mlp-init"), layout=layout
    )

    n_val = max(1, int(round(config.validation_fraction * n)))
    order = rng.permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_tr, y_tr = xs[train_idx], ys[train_idx]
    x_val, y_val = xs[val_idx], ys[val_idx]

    params = network.parameters()
    optimizer = _Adam(params, config.learning_rate)
    best_val = np.inf
    best_params = [p.copy() for p in params]
    patience_left = config.early_stop_patience
    batch = max(1, min(config.batch_size, x_tr.shape[0]))

    for _ in range(config.max_epochs):
        epoch_order = rng.permutation(x_tr.shape[0])
        for start in range(0, x_tr.shape[0], batch):
            idx = epoch_order[start : start + batch]
            loss, grads = network.loss_and_grads(x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss("training loss diverged; lower the learning rate")
            optimizer.step(params, grads)
        val_loss, _ = network.loss_and_grads(x_val, y_val)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss("validation loss diverged; lower the learning rate")
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = [p.copy() for p in params]
            patience_left = config.early_stop_patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break

    for current, best in zip(params, best_params):
        current[...] = best
    return MlpLearner(config, task, network, x_mean, x_std, y_mean, y_scale)
