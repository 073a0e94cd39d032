"""Minimal differentiable-network core: MLPs, manual backprop, Adam.

All parameters of a network (or of a composite model) live in one flat
float64 vector; layer weights are contiguous views into it. This keeps the
optimizer to a handful of vectorized ops per step and makes freeze masks,
checksums and checkpointing trivial.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, TrainingError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParamBundle:
    """Flat parameter vector with gradient and Adam moment buffers."""

    def __init__(self, total: int):
        self.vec = np.zeros(total)
        self.grad = np.zeros(total)
        self.m = np.zeros(total)
        self.v = np.zeros(total)
        self.t = 0
        self._cursor = 0

    @property
    def size(self) -> int:
        return self.vec.size

    def take(self, shape) -> tuple[np.ndarray, np.ndarray]:
        """Reserve a contiguous block; returns (param_view, grad_view)."""
        n = int(np.prod(shape))
        s = slice(self._cursor, self._cursor + n)
        if s.stop > self.vec.size:
            raise ContractError("parameter bundle overflow")
        self._cursor = s.stop
        return self.vec[s].reshape(shape), self.grad[s].reshape(shape)

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def adam_step(self, lr: float, mask: np.ndarray | None = None) -> None:
        """One Adam update on the whole vector.

        `mask` (float 0/1 per parameter) gates the parameter delta, so masked
        parameters stay bit-identical; their moments still decay, which does
        not affect the freeze contract.
        """
        self.t += 1
        g = self.grad
        self.m *= ADAM_BETA1
        self.m += (1.0 - ADAM_BETA1) * g
        self.v *= ADAM_BETA2
        self.v += (1.0 - ADAM_BETA2) * (g * g)
        mhat = self.m / (1.0 - ADAM_BETA1 ** self.t)
        vhat = self.v / (1.0 - ADAM_BETA2 ** self.t)
        step = lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        if mask is not None:
            step *= mask
        self.vec -= step

    def grow(self, extra: int) -> None:
        """Extend the bundle by `extra` zero-initialized parameters.

        Existing views become stale; callers must re-take all views after
        growing (see WorldModel.add_reward_head).
        """
        self.vec = np.concatenate([self.vec, np.zeros(extra)])
        self.grad = np.concatenate([self.grad, np.zeros(extra)])
        self.m = np.concatenate([self.m, np.zeros(extra)])
        self.v = np.concatenate([self.v, np.zeros(extra)])
        self._cursor = 0


def _act_forward(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "linear":
        return z
    raise ContractError(f"unknown activation {kind!r}")


def _act_backward(a: np.ndarray, d: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return d * (1.0 - a * a)
    if kind == "relu":
        return d * (a > 0.0)
    if kind == "linear":
        return d
    raise ContractError(f"unknown activation {kind!r}")


def mlp_param_count(dims) -> int:
    return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


class Mlp:
    """Fully-connected net. `dims` includes input and output sizes.

    `activation` applies to every layer except the last, which is linear
    unless `out_activation` overrides it. Outputs that feed a cross-entropy
    loss stay linear (logits); callers apply sigmoid/softmax themselves.
    """

    def __init__(self, dims, rng: np.random.Generator,
                 activation: str = "tanh", out_activation: str = "linear",
                 bundle: ParamBundle | None = None):
        self.dims = list(dims)
        self.acts = [activation] * (len(dims) - 2) + [out_activation]
        self.bundle = bundle if bundle is not None else ParamBundle(mlp_param_count(dims))
        self._owns_bundle = bundle is None
        self.weights = []   # (W, b) views
        self.grads = []     # (gW, gb) views
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            W, gW = self.bundle.take((fan_in, fan_out))
            b, gb = self.bundle.take((fan_out,))
            if activation == "relu":
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            W[:] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append((W, b))
            self.grads.append((gW, gb))

    @property
    def param_count(self) -> int:
        return mlp_param_count(self.dims)

    def rebind(self, bundle: ParamBundle) -> None:
        """Re-take views after a bundle reallocation; values come from the bundle."""
        self.bundle = bundle
        self.weights, self.grads = [], []
        for i in range(len(self.dims) - 1):
            W, gW = bundle.take((self.dims[i], self.dims[i + 1]))
            b, gb = bundle.take((self.dims[i + 1],))
            self.weights.append((W, b))
            self.grads.append((gW, gb))

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Forward pass on a (batch, in_dim) array; pass `cache=[]` to enable backward."""
        a = x
        for (W, b), kind in zip(self.weights, self.acts):
            z = a @ W
            z += b
            out = _act_forward(z, kind)
            if cache is not None:
                cache.append((a, out, kind))
            a = out
        return a

    def backward(self, cache: list, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns gradient w.r.t. the input."""
        d = dout
        for (W, b), (gW, gb), (x, a, kind) in zip(
                reversed(self.weights), reversed(self.grads), reversed(cache)):
            dz = _act_backward(a, d, kind)
            gW += x.T @ dz
            gb += dz.sum(axis=0)
            d = dz @ W.T
        return d

    def zero_grad(self) -> None:
        if self._owns_bundle:
            self.bundle.zero_grad()
        else:
            for gW, gb in self.grads:
                gW[:] = 0.0
                gb[:] = 0.0

    def adam_step(self, lr: float) -> None:
        if not self._owns_bundle:
            raise ContractError("shared-bundle Mlp is stepped through its owner")
        self.bundle.adam_step(lr)


def clone_into(target: Mlp, source: Mlp) -> None:
    """Copy all parameters bit-exactly; shapes must match."""
    if target.dims != source.dims:
        raise ContractError(f"shape mismatch: {target.dims} vs {source.dims}")
    for (tw, tb), (sw, sb) in zip(target.weights, source.weights):
        tw[:] = sw
        tb[:] = sb


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements; returns (loss, dL/dpred)."""
    diff = pred - target
    n = diff.size
    return float((diff * diff).sum() / n), (2.0 / n) * diff


def bce_logits_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy from logits, mean over elements (numerically stable)."""
    z, y = logits, labels
    loss = float((np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / z.size)
    return loss, (sigmoid(z) - y) / z.size


def softmax_ce_loss(logits: np.ndarray, labels: np.ndarray,
                    sample_weight: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy from logits; labels are int class indices."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = z.shape[0]
    rows = np.arange(n)
    logp = z[rows, labels] - np.log(ez.sum(axis=1))
    if sample_weight is None:
        loss = float(-logp.sum() / n)
        dz = p.copy()
        dz[rows, labels] -= 1.0
        dz /= n
    else:
        wsum = float(sample_weight.sum())
        loss = float(-(sample_weight * logp).sum() / wsum)
        dz = p * sample_weight[:, None]
        dz[rows, labels] -= sample_weight
        dz /= wsum
    return loss, dz


def check_finite(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what}: {value!r}")


def grad_check(loss_fn, bundle: ParamBundle, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn()` must recompute the loss from the bundle's current parameters
    and, when called with `with_grad=True`, leave gradients in `bundle.grad`.
    Intended for small models only (cost is 2 loss evaluations per parameter).
    """
    bundle.zero_grad()
    loss_fn(with_grad=True)
    analytic = bundle.grad.copy()
    vec = bundle.vec
    worst = 0.0
    for i in range(vec.size):
        orig = vec[i]
        vec[i] = orig + h
        lp = loss_fn(with_grad=False)
        vec[i] = orig - h
        lm = loss_fn(with_grad=False)
        vec[i] = orig
        numeric = (lp - lm) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
