"""Residual graph-convolution network with hand-written gradients and AdamW.

Layer rule, for layer ``l`` with normalized adjacency ``A``::

    H[l+1] = relu(A @ H[l] @ W[l] + b[l]) + H[l] @ P[l]     (P[l] only when widths differ)
    logits = H[L] @ W_head + b_head

Node inputs may carry leading batch axes, ``(..., n, d)``; the same ``A`` is
applied to every batch slice. Masked context passes use this to evaluate
``n`` differently-masked copies of a scene in one call.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .scene import repg_inputs
from .tensor import cross_entropy, softmax_rows

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (256, 128, 64, 64)

_model_versions = itertools.count(1)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class GcnModel:
    in_dim: int
    num_classes: int
    widths: tuple[int, ...]
    params: dict[str, np.ndarray]
    version: int = field(default_factory=lambda: next(_model_versions), compare=False)

    @classmethod
    def init(
        cls, in_dim: int, num_classes: int, widths: Sequence[int] = DEFAULT_WIDTHS, seed: int = 0
    ) -> "GcnModel":
        if in_dim <= 0 or num_classes <= 0 or any(w <= 0 for w in widths):
            raise ValidationError(f"bad dimensions in={in_dim} classes={num_classes} widths={widths}")
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        prev = in_dim
        for i, width in enumerate(widths):
            params[f"w{i}"] = _glorot(rng, prev, width)
            params[f"b{i}"] = np.zeros(width)
            if prev != width:
                params[f"p{i}"] = _glorot(rng, prev, width)
            prev = width
        params["head_w"] = _glorot(rng, prev, num_classes)
        params["head_b"] = np.zeros(num_classes)
        return cls(in_dim, num_classes, tuple(widths), params)

    @property
    def num_layers(self) -> int:
        return len(self.widths)

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        prev = self.in_dim
        for i, width in enumerate(self.widths):
            shapes[f"w{i}"] = (prev, width)
            shapes[f"b{i}"] = (width,)
            if prev != width:
                shapes[f"p{i}"] = (prev, width)
            prev = width
        shapes["head_w"] = (prev, self.num_classes)
        shapes["head_b"] = (self.num_classes,)
        return shapes

    def check(self) -> None:
        expected = self.expected_shapes()
        if set(expected) != set(self.params):
            raise ShapeError(f"parameter names {sorted(self.params)} != {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape} != {shape}")

    def copy(self) -> "GcnModel":
        return GcnModel(self.in_dim, self.num_classes, self.widths, {k: v.copy() for k, v in self.params.items()})

    def same_params(self, other: "GcnModel") -> bool:
        """Bitwise parameter equality."""
        return self.params.keys() == other.params.keys() and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items()
        )

    def touch(self) -> None:
        """Mark parameters as changed so outstanding forward caches go stale."""
        self.version = next(_model_versions)


@dataclass
class ForwardResult:
    logits: np.ndarray
    probs: np.ndarray
    cache: dict


def gcn_forward(model: GcnModel, adjacency: np.ndarray, node_inputs: np.ndarray) -> ForwardResult:
    n = adjacency.shape[0]
    if adjacency.shape != (n, n):
        raise ShapeError(f"adjacency must be square, got {adjacency.shape}")
    if node_inputs.ndim < 2 or node_inputs.shape[-2] != n:
        raise ShapeError(f"node inputs {node_inputs.shape} do not match {n}-node adjacency")
    if node_inputs.shape[-1] != model.in_dim:
        raise ShapeError(f"input dim {node_inputs.shape[-1]} != model in_dim {model.in_dim}")
    p = model.params
    hs = [node_inputs]
    pre = []
    h = node_inputs
    for i in range(model.num_layers):
        z = adjacency @ (h @ p[f"w{i}"]) + p[f"b{i}"]
        res = h @ p[f"p{i}"] if f"p{i}" in p else h
        pre.append(z)
        h = np.maximum(z, 0.0) + res
        hs.append(h)
    logits = h @ p["head_w"] + p["head_b"]
    cache = {"adjacency": adjacency, "hs": hs, "pre": pre, "version": model.version}
    return ForwardResult(logits, softmax_rows(logits), cache)


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def gcn_backward(model: GcnModel, cache: dict, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss given d(loss)/d(logits)."""
    if cache.get("version") != model.version or len(cache.get("pre", ())) != model.num_layers:
        raise ValidationError("forward cache does not belong to the current model parameters")
    hs, pre, adjacency = cache["hs"], cache["pre"], cache["adjacency"]
    if grad_logits.shape != hs[-1].shape[:-1] + (model.num_classes,):
        raise ShapeError(f"grad_logits shape {grad_logits.shape} does not match forward pass")
    p = model.params
    grads: dict[str, np.ndarray] = {}
    grads["head_w"] = _flat(hs[-1]).T @ _flat(grad_logits)
    grads["head_b"] = _flat(grad_logits).sum(axis=0)
    g = grad_logits @ p["head_w"].T
    adj_t = adjacency.T
    for i in reversed(range(model.num_layers)):
        h_in = hs[i]
        gz = g * (pre[i] > 0)
        grads[f"b{i}"] = _flat(gz).sum(axis=0)
        g_hw = adj_t @ gz
        grads[f"w{i}"] = _flat(h_in).T @ _flat(g_hw)
        g_prev = g_hw @ p[f"w{i}"].T
        if f"p{i}" in p:
            grads[f"p{i}"] = _flat(h_in).T @ _flat(g)
            g_prev = g_prev + g @ p[f"p{i}"].T
        else:
            g_prev = g_prev + g
        g = g_prev
    return grads


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One AdamW update, applied to ``params`` in place."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        w = params[name]
        if g.shape != w.shape:
            raise ShapeError(f"{name}: grad {g.shape} vs param {w.shape}")
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(w)
            state.second_moment[name] = np.zeros_like(w)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            w -= state.lr * state.weight_decay * w
        w -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def train_step(
    model: GcnModel,
    state: AdamWState,
    adjacency: np.ndarray,
    inputs: np.ndarray,
    targets: Sequence[int],
    select: tuple | None = None,
) -> float:
    """Forward, cross-entropy, backward and one AdamW update.

    ``select`` indexes the rows of ``logits`` that carry a target (used by
    masked passes where only the diagonal of the batch is supervised).
    """
    out = gcn_forward(model, adjacency, inputs)
    if select is None:
        loss, g = cross_entropy(out.probs, targets)
        grad_logits = g
    else:
        loss, g = cross_entropy(out.probs[select], targets)
        grad_logits = np.zeros_like(out.logits)
        grad_logits[select] = g
    grads = gcn_backward(model, out.cache, grad_logits)
    adamw_step(model.params, grads, state)
    model.touch()
    return loss


# (adjacency, inputs, targets, select)
Sample = tuple[np.ndarray, np.ndarray, np.ndarray, "tuple | None"]


def _canonical(sample: Sample) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Inputs as ``(copies, n, d)`` plus explicit (copy, node) indices of supervised rows."""
    adjacency, inputs, targets, select = sample
    n, d = inputs.shape[-2], inputs.shape[-1]
    x = inputs.reshape(-1, n, d)
    if select is None:
        if inputs.ndim != 2:
            raise ShapeError("batched inputs need an explicit select")
        copy_idx, node_idx = np.zeros(n, dtype=np.int64), np.arange(n)
    else:
        if inputs.ndim != 3 or len(select) != 2:
            raise ShapeError("select must index (copy, node) of 3-D inputs")
        copy_idx, node_idx = (np.asarray(a, dtype=np.int64) for a in select)
    return adjacency, x, np.asarray(targets, dtype=np.int64), copy_idx, node_idx


def _merge(samples: Sequence[Sample]) -> Sample:
    """Stack samples that share one adjacency into a single batched sample."""
    if len(samples) == 1:
        return samples[0]
    xs, ts, cs, ns = [], [], [], []
    offset = 0
    for s in samples:
        adjacency, x, t, c, nd = _canonical(s)
        xs.append(x)
        ts.append(t)
        cs.append(c + offset)
        ns.append(nd)
        offset += x.shape[0]
    return adjacency, np.concatenate(xs), np.concatenate(ts), (np.concatenate(cs), np.concatenate(ns))


def _batches(samples: Sequence[Sample], order: np.ndarray, batch_size: int) -> list[list[Sample]]:
    """Walk ``order`` filling one bucket per adjacency; emit a bucket when full."""
    if batch_size <= 1:
        return [[samples[k]] for k in order]
    buckets: dict[bytes, list[Sample]] = {}
    out = []
    for k in order:
        key = samples[k][0].tobytes()
        bucket = buckets.setdefault(key, [])
        bucket.append(samples[k])
        if len(bucket) == batch_size:
            out.append(bucket)
            buckets[key] = []
    out.extend(b for b in buckets.values() if b)
    return out


def train_samples(
    model: GcnModel,
    samples: Sequence[Sample],
    epochs: int,
    seed: int,
    state: AdamWState | None = None,
    batch_size: int = 1,
) -> list[float]:
    """Seeded-shuffle epochs; returns the mean step loss of each epoch.

    With ``batch_size`` > 1, samples sharing an adjacency matrix (for fully
    connected scenes: the same node count) are stacked into one step.
    """
    state = state if state is not None else AdamWState()
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        batches = _batches(samples, order, batch_size)
        total = 0.0
        for batch in batches:
            adjacency, inputs, targets, select = _merge(batch)
            total += train_step(model, state, adjacency, inputs, targets, select)
        history.append(total / max(len(batches), 1))
        logger.debug("epoch %d loss %.5f", epoch, history[-1])
    return history


def train_epochs(
    model: GcnModel,
    scenes: Sequence,
    targets: Sequence[Sequence[int]],
    epochs: int,
    rng_seed: int,
    features: Callable | None = None,
    state: AdamWState | None = None,
    batch_size: int = 1,
) -> tuple[GcnModel, list[float]]:
    """Train on whole scene graphs, one AdamW step per scene.

    ``features`` maps a scene to its node-input matrix; defaults to the
    appearance+geometry inputs.
    """
    features = features or repg_inputs
    if len(targets) != len(scenes):
        raise ValidationError(f"{len(scenes)} scenes but {len(targets)} target lists")
    samples = []
    for scene, y in zip(scenes, targets):
        if y is None or len(y) != len(scene) or any(t is None for t in y):
            raise ValidationError(f"scene {getattr(scene, 'scene_id', '?')!r} lacks a target for every node")
        samples.append((scene.adjacency_norm, features(scene), np.asarray(y, dtype=np.int64), None))
    return model, train_samples(model, samples, epochs, rng_seed, state, batch_size)


def predict_probs(model: GcnModel, adjacency: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    return gcn_forward(model, adjacency, inputs).probs
