"""CNN-BiGRU per-frame binary detector with hand-written backpropagation.

Layer stack for an input of shape (batch, frames, channels)::

    conv1d(k=5, same) -> ReLU -> conv1d(k=5, same) -> ReLU
    -> GRU forward  \\
    -> GRU backward / concat -> affine(2H -> 1) -> sigmoid

GRU update (per direction)::

    z = sigmoid(x Wz + bxz + h Uz + bhz)
    r = sigmoid(x Wr + bxr + h Ur + bhr)
    n = tanh(x Wn + bxn + r * (h Un + bhn))
    h' = (1 - z) * n + z * h

Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..dsp import N_CHANNELS, NormStats, as_array
from ..errors import ShapeMismatch

PROB_CLIP = 1e-7


@dataclass(frozen=True)
class Architecture:
    n_inputs: int = N_CHANNELS
    conv_channels: tuple[int, ...] = (64, 64)
    kernel: int = 5
    hidden: int = 64

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("kernel width must be odd for same padding")
        if not self.conv_channels:
            raise ValueError("at least one conv layer is required")

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        c_in = self.n_inputs
        for i, c_out in enumerate(self.conv_channels):
            shapes[f"conv{i}.w"] = (self.kernel, c_in, c_out)
            shapes[f"conv{i}.b"] = (c_out,)
            c_in = c_out
        H = self.hidden
        for d in ("fwd", "bwd"):
            shapes[f"gru_{d}.wx"] = (c_in, 3 * H)
            shapes[f"gru_{d}.uh"] = (H, 3 * H)
            shapes[f"gru_{d}.bx"] = (3 * H,)
            shapes[f"gru_{d}.bh"] = (3 * H,)
        shapes["out.w"] = (2 * H,)
        shapes["out.b"] = (1,)
        return shapes


@dataclass
class ModelParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]
    norm: NormStats = None
    task: str = "I"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.norm is None:
            self.norm = NormStats.identity(self.arch.n_inputs)
        shapes = self.arch.tensor_shapes()
        if set(shapes) != set(self.tensors):
            raise ShapeMismatch("tensor names do not match the architecture")
        for k, shp in shapes.items():
            if self.tensors[k].shape != shp:
                raise ShapeMismatch(f"{k}: shape {self.tensors[k].shape}, expected {shp}")
        if self.norm.mean.shape != (self.arch.n_inputs,):
            raise ShapeMismatch("norm stats channel count does not match n_inputs")

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            {k: v.copy() for k, v in self.tensors.items()},
            NormStats(self.norm.mean.copy(), self.norm.std.copy()),
            self.task,
            dict(self.meta),
        )

    def rounded_to_storage(self) -> "ModelParams":
        """Copy with every value rounded to float32, the on-disk precision."""
        out = self.copy()
        for k, v in out.tensors.items():
            out.tensors[k] = v.astype(np.float32).astype(np.float64)
        out.norm = NormStats(
            out.norm.mean.astype(np.float32).astype(np.float64),
            out.norm.std.astype(np.float32).astype(np.float64),
        )
        return out

    def swapped_directions(self) -> "ModelParams":
        out = self.copy()
        for part in ("wx", "uh", "bx", "bh"):
            out.tensors[f"gru_fwd.{part}"], out.tensors[f"gru_bwd.{part}"] = (
                out.tensors[f"gru_bwd.{part}"],
                out.tensors[f"gru_fwd.{part}"],
            )
        return out


def param_names(arch: Architecture) -> list[str]:
    return list(arch.tensor_shapes())


def init_params(arch: Architecture, rng: np.random.Generator, norm: NormStats | None = None, task: str = "I") -> ModelParams:
    """Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor."""
    tensors = {}
    for name, shape in arch.tensor_shapes().items():
        if name.startswith("conv"):
            layer = name.split(".")[0]
            wshape = arch.tensor_shapes()[layer + ".w"]
            fan_in = wshape[0] * wshape[1]
        elif name.startswith("gru"):
            fan_in = arch.hidden
        else:
            fan_in = 2 * arch.hidden
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(arch=arch, tensors=tensors, norm=norm, task=task)


def zero_params(arch: Architecture, task: str = "I") -> ModelParams:
    return ModelParams(arch, {k: np.zeros(s) for k, s in arch.tensor_shapes().items()}, task=task)


# --- layers ------------------------------------------------------------------


def _conv_forward(X, W, b):
    B, T, C = X.shape
    K = W.shape[0]
    pad = K // 2
    Xp = np.pad(X, ((0, 0), (pad, pad), (0, 0)))
    cols = np.stack([Xp[:, j : j + T, :] for j in range(K)], axis=2).reshape(B, T, K * C)
    Y = cols @ W.reshape(K * C, -1) + b
    return Y, cols


def _conv_backward(dY, cols, W, need_dx=True):
    K, C, Cout = W.shape
    B, T, _ = dY.shape
    dW = (cols.reshape(-1, K * C).T @ dY.reshape(-1, Cout)).reshape(K, C, Cout)
    db = dY.sum(axis=(0, 1))
    if not need_dx:
        return None, dW, db
    dcols = (dY @ W.reshape(K * C, Cout).T).reshape(B, T, K, C)
    pad = K // 2
    dXp = np.zeros((B, T + 2 * pad, C))
    for j in range(K):
        dXp[:, j : j + T, :] += dcols[:, :, j, :]
    return dXp[:, pad : pad + T, :], dW, db


def _gru_forward(X, wx, uh, bx, bh):
    """Run one GRU direction left to right.  Returns hidden states and a backward cache.

    Internals are time-major (T, B, .) so every per-step slice is contiguous.
    """
    B, T, _ = X.shape
    H = uh.shape[0]
    Gx = np.ascontiguousarray((X @ wx + bx).transpose(1, 0, 2))
    Hs = np.empty((T + 1, B, H))
    Hs[0] = 0.0
    ZR = np.empty((T, B, 2 * H))
    N = np.empty((T, B, H))
    Ghn = np.empty((T, B, H))
    gh = np.empty((B, 3 * H))
    pre = np.empty((B, 2 * H))
    for t in range(T):
        h = Hs[t]
        np.matmul(h, uh, out=gh)
        gh += bh
        gx = Gx[t]
        np.add(gx[:, : 2 * H], gh[:, : 2 * H], out=pre)
        zr = expit(pre, out=ZR[t])
        ghn = Ghn[t]
        ghn[...] = gh[:, 2 * H :]
        n = N[t]
        np.multiply(zr[:, H:], ghn, out=n)
        n += gx[:, 2 * H :]
        np.tanh(n, out=n)
        # h' = n + z * (h - n)
        h_new = Hs[t + 1]
        np.subtract(h, n, out=h_new)
        h_new *= zr[:, :H]
        h_new += n
    return Hs[1:].transpose(1, 0, 2), (X, Hs, ZR, N, Ghn)


def _gru_backward(dHs, cache, wx, uh, need_dx=True):
    X, Hs, ZR, N, Ghn = cache
    T, B, H = N.shape
    dHs_tm = np.ascontiguousarray(dHs.transpose(1, 0, 2))
    dG = np.empty((T, B, 3 * H))  # gate pre-activation grads, input side
    dGh = np.empty((T, B, 3 * H))  # same, hidden side (candidate gate differs by r)
    dh = np.zeros((B, H))
    tmp = np.empty((B, H))
    uhT = np.ascontiguousarray(uh.T)
    for t in range(T - 1, -1, -1):
        dh += dHs_tm[t]
        z = ZR[t, :, :H]
        r = ZR[t, :, H:]
        n = N[t]
        g = dG[t]
        daz = g[:, :H]
        dar = g[:, H : 2 * H]
        dan = g[:, 2 * H :]
        # dan = dh * (1 - z) * (1 - n^2)
        np.multiply(n, n, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        np.subtract(1.0, z, out=dan)
        dan *= dh
        dan *= tmp
        # daz = dh * (h_prev - n) * z * (1 - z)
        np.subtract(Hs[t], n, out=daz)
        daz *= dh
        np.subtract(1.0, z, out=tmp)
        tmp *= z
        daz *= tmp
        # dar = dan * ghn * r * (1 - r)
        np.multiply(dan, Ghn[t], out=dar)
        np.subtract(1.0, r, out=tmp)
        tmp *= r
        dar *= tmp
        gh = dGh[t]
        gh[:, : 2 * H] = g[:, : 2 * H]
        np.multiply(dan, r, out=gh[:, 2 * H :])
        dh *= z
        dh += gh @ uhT
    C = X.shape[2]
    dG_bt = dG.transpose(1, 0, 2)
    dwx = X.reshape(-1, C).T @ dG_bt.reshape(-1, 3 * H)
    dbx = dG.sum(axis=(0, 1))
    duh = Hs[:-1].reshape(-1, H).T @ dGh.reshape(-1, 3 * H)
    dbh = dGh.sum(axis=(0, 1))
    dX = dG_bt @ wx.T if need_dx else None
    return dX, dwx, duh, dbx, dbh


def bigru(tensors, X):
    """Concatenated forward/backward hidden states, shape (B, T, 2H)."""
    out, _ = _bigru_forward(tensors, X)
    return out


def _bigru_forward(tensors, X):
    p = tensors
    Hf, cf = _gru_forward(X, p["gru_fwd.wx"], p["gru_fwd.uh"], p["gru_fwd.bx"], p["gru_fwd.bh"])
    Hb_rev, cb = _gru_forward(X[:, ::-1], p["gru_bwd.wx"], p["gru_bwd.uh"], p["gru_bwd.bx"], p["gru_bwd.bh"])
    return np.concatenate([Hf, Hb_rev[:, ::-1]], axis=2), (cf, cb)


def _as_batch(features, n_inputs):
    X = as_array(features)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != n_inputs:
        raise ShapeMismatch(f"expected (frames, {n_inputs}) features, got {np.shape(X)}")
    return X


def _forward(params: ModelParams, X):
    p = params.tensors
    caches = []
    A = X
    for i in range(len(params.arch.conv_channels)):
        Y, cols = _conv_forward(A, p[f"conv{i}.w"], p[f"conv{i}.b"])
        caches.append((cols, Y))
        A = np.maximum(Y, 0.0)
    O, gru_cache = _bigru_forward(p, A)
    logits = O @ p["out.w"] + p["out.b"][0]
    return logits, (caches, A, O, gru_cache)


def forward_logits(params: ModelParams, features) -> np.ndarray:
    X = _as_batch(features, params.arch.n_inputs)
    logits, _ = _forward(params, X)
    return logits[0] if as_array(features).ndim == 2 else logits


def forward(params: ModelParams, features) -> np.ndarray:
    """Per-frame probabilities for already-normalized features.

    Accepts ``(frames, channels)`` or ``(batch, frames, channels)``.
    """
    return expit(forward_logits(params, features))


def predict_proba(params: ModelParams, features) -> np.ndarray:
    """Normalize raw features with the model's stored statistics, then run :func:`forward`."""
    X = as_array(features)
    return forward(params, params.norm.apply(X))


def bce_loss(probs, targets) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"probs {p.shape} vs targets {t.shape}")
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))


def _group_by_length(batch):
    groups: dict[int, list[int]] = {}
    for i, (X, _) in enumerate(batch):
        T = as_array(X).shape[0]
        groups.setdefault(T, []).append(i)
    return [groups[T] for T in sorted(groups)]


def loss_and_gradients(params: ModelParams, batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-recording BCE over ``batch`` and its exact gradient.

    ``batch`` is a sequence of ``(features, targets)`` pairs with features
    already normalized.  Each recording contributes the mean of its frame
    losses; the batch loss is the mean over recordings.
    """
    if not batch:
        raise ValueError("empty batch")
    n_rec = len(batch)
    p = params.tensors
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    total = 0.0
    n_conv = len(params.arch.conv_channels)
    for idx in _group_by_length(batch):
        X = np.stack([_as_batch(batch[i][0], params.arch.n_inputs)[0] for i in idx])
        Y = np.stack([np.asarray(batch[i][1], dtype=np.float64) for i in idx])
        if Y.shape != X.shape[:2]:
            raise ShapeMismatch(f"targets {Y.shape} do not match features {X.shape[:2]}")
        B, T = Y.shape
        logits, (caches, A, O, (cf, cb)) = _forward(params, X)
        prob = expit(logits)
        pc = np.clip(prob, PROB_CLIP, 1.0 - PROB_CLIP)
        total += float(np.sum(-(Y * np.log(pc) + (1.0 - Y) * np.log1p(-pc)))) / T
        inside = (prob >= PROB_CLIP) & (prob <= 1.0 - PROB_CLIP)
        dlogits = (prob - Y) * inside / (T * n_rec)

        grads["out.w"] += np.einsum("btk,bt->k", O, dlogits)
        grads["out.b"][0] += dlogits.sum()
        dO = dlogits[:, :, None] * p["out.w"]
        H = params.arch.hidden
        dA_f, *gf = _gru_backward(dO[:, :, :H], cf, p["gru_fwd.wx"], p["gru_fwd.uh"])
        dA_b_rev, *gb = _gru_backward(dO[:, ::-1, H:], cb, p["gru_bwd.wx"], p["gru_bwd.uh"])
        for d, g in (("fwd", gf), ("bwd", gb)):
            for part, val in zip(("wx", "uh", "bx", "bh"), g):
                grads[f"gru_{d}.{part}"] += val
        dA = dA_f + dA_b_rev[:, ::-1]
        for i in range(n_conv - 1, -1, -1):
            cols, Ypre = caches[i]
            dY = dA * (Ypre > 0)
            dA, dW, db = _conv_backward(dY, cols, p[f"conv{i}.w"], need_dx=i > 0)
            grads[f"conv{i}.w"] += dW
            grads[f"conv{i}.b"] += db
    return total / n_rec, grads


def batch_loss(params: ModelParams, batch) -> float:
    total = 0.0
    for idx in _group_by_length(batch):
        X = np.stack([_as_batch(batch[i][0], params.arch.n_inputs)[0] for i in idx])
        Y = np.stack([np.asarray(batch[i][1], dtype=np.float64) for i in idx])
        logits, _ = _forward(params, X)
        pc = np.clip(expit(logits), PROB_CLIP, 1.0 - PROB_CLIP)
        total += float(np.sum(-(Y * np.log(pc) + (1.0 - Y) * np.log1p(-pc)))) / Y.shape[1]
    return total / len(batch)


def gradients(params: ModelParams, batch) -> dict[str, np.ndarray]:
    return loss_and_gradients(params, batch)[1]
