"""Batched central-difference oracle for every parameter of a GCN.

The forward pass here is written independently of the library. Perturbed
copies of one parameter tensor are stacked along a new leading axis, so a
few hundred finite-difference coordinates are evaluated in one vectorised
pass. Layers below the perturbed one are shared and computed once.
"""

from __future__ import annotations

import numpy as np

H = 1e-4


def _layer(params, adj, h, i, get):
    z = adj @ (h @ get(f"w{i}")) + get(f"b{i}")
    skip = h @ get(f"p{i}") if f"p{i}" in params else h
    return z, np.maximum(z, 0.0) + skip


def _run(params, num_layers, adj, h, start, override=None):
    """Layers ``start..`` then the head; returns (logits, pre-activations)."""
    extra = h.ndim - 2  # input batch axes, e.g. the masked ConG stack

    def get(name):
        if override is None or name not in override:
            return params[name]
        v = override[name]
        if v.ndim == 2:  # stacked bias (B, d)
            return v.reshape((v.shape[0],) + (1,) * (extra + 1) + v.shape[1:])
        return v.reshape((v.shape[0],) + (1,) * extra + v.shape[1:])

    pre = []
    for i in range(start, num_layers):
        z, h = _layer(params, adj, h, i, get)
        pre.append(z)
    return h @ get("head_w") + get("head_b"), pre


def _loss(logits, targets, select):
    """Mean cross-entropy over nodes; any leading axes are kept."""
    if select is not None:
        logits = logits[..., select[0], select[1], :]
    m = logits.max(axis=-1, keepdims=True)
    logz = m[..., 0] + np.log(np.exp(logits - m).sum(axis=-1))
    picked = np.take_along_axis(logits, np.broadcast_to(targets[:, None], logits.shape[:-1] + (1,)), axis=-1)[..., 0]
    return (logz - picked).mean(axis=-1)


def reference_loss(params, num_layers, adj, x, targets, select=None) -> float:
    logits, _ = _run(params, num_layers, adj, x, 0)
    return float(_loss(logits, np.asarray(targets), select))


def min_abs_preactivation(params, num_layers, adj, x) -> float:
    _, pre = _run(params, num_layers, adj, x, 0)
    return min(float(np.min(np.abs(z))) for z in pre)


def _extended_difference(params, num_layers, adj, x, targets, select, name, coord):
    """Central difference for one coordinate evaluated in extended precision.

    Returns None when the +h and -h evaluations disagree on a ReLU mask.
    """
    ld = {k: v.astype(np.longdouble) for k, v in params.items()}
    adj_l, x_l = adj.astype(np.longdouble), x.astype(np.longdouble)
    flat = ld[name].reshape(-1)
    base = flat[coord]
    out = []
    for sign in (1, -1):
        flat[coord] = base + sign * np.longdouble(H)
        logits, pre = _run(ld, num_layers, adj_l, x_l, 0)
        out.append((_loss(logits, targets, select), [z > 0 for z in pre]))
    flat[coord] = base
    if any(not np.array_equal(a, b) for a, b in zip(out[0][1], out[1][1])):
        return None
    return (out[0][0] - out[1][0]) / (2 * np.longdouble(H))


def check_all(params, num_layers, adj, x, targets, grads, select=None, entries=None, rng=None,
              budget_bytes=48 << 20, refine_above=1e-5):
    """Compare ``grads`` with central differences (h = 1e-4).

    Every coordinate is checked unless ``entries`` caps the number drawn per
    tensor. Coordinates whose +h and -h evaluations disagree on any ReLU
    mask are kinks and are skipped. A float64 difference quotient carries
    roughly eps * loss / h of rounding noise, which swamps gradients near
    1e-8; coordinates with relative error above ``refine_above`` are
    therefore re-evaluated with the same step in extended precision.
    Returns (worst relative error, checked, skipped).
    """
    targets = np.asarray(targets)
    inputs = [x]
    for i in range(num_layers):
        inputs.append(_layer(params, adj, inputs[-1], i, params.__getitem__)[1])

    worst, checked, skipped = 0.0, 0, 0
    for name, w in params.items():
        start = num_layers if name.startswith("head") else int(name[1:])
        flat = w.reshape(-1)
        coords = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            coords = np.sort((rng or np.random.default_rng(0)).choice(flat.size, entries, replace=False))
        widest = max([v.shape[-1] for v in params.values()] + [x.shape[-1]])
        per_item = 8 * (flat.size + 4 * inputs[start][..., :1].size * widest)
        chunk = max(1, budget_bytes // per_item)
        for lo in range(0, coords.size, chunk):
            idx = coords[lo : lo + chunk]
            b = idx.size
            losses, masks = [], []
            for sign in (1.0, -1.0):
                stack = np.repeat(flat[None, :], b, axis=0)
                stack[np.arange(b), idx] += sign * H
                logits, pre = _run(params, num_layers, adj, inputs[start], start, {name: stack.reshape((b,) + w.shape)})
                losses.append(_loss(logits, targets, select))
                # A perturbed projection leaves its own layer's pre-activation unbatched.
                masks.append([np.broadcast_to(z > 0, (b,) + z.shape[-x.ndim:]).reshape(b, -1) for z in pre])
            smooth = np.ones(b, dtype=bool)
            for mp, mm in zip(*masks):
                smooth &= (mp == mm).all(axis=1)
            num = (losses[0] - losses[1]) / (2 * H)
            ana = grads[name].reshape(-1)[idx]
            rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
            for j in np.flatnonzero(smooth & (rel > refine_above)):
                ext = _extended_difference(params, num_layers, adj, x, targets, select, name, idx[j])
                if ext is None:
                    smooth[j] = False
                    continue
                rel[j] = float(abs(np.longdouble(ana[j]) - ext) / max(abs(ana[j]), abs(float(ext)), 1e-8))
            if smooth.any():
                worst = max(worst, float(rel[smooth].max()))
            checked += int(smooth.sum())
            skipped += int((~smooth).sum())
    return worst, checked, skipped
