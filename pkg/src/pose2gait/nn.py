"""Minimal reverse-mode autodiff over numpy arrays.

Only the handful of ops the gait network needs are provided: 1D convolution
(valid padding), ReLU, flatten, fully connected, concatenation, sum and the
weighted mean squared error loss. Arrays are batch-first; sequences are laid
out as (batch, time, channels).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class GraphError(RuntimeError):
    pass


class Tensor:
    """An array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    return arr


def _node(data, parents: tuple, backward) -> Tensor:
    return Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents, _backward=backward)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# ops; each backward maps the upstream gradient to one gradient per parent
# (None where the parent needs none)

def conv1d_output_length(t_in: int, kernel: int, stride: int) -> int:
    if t_in < kernel:
        raise ValueError(f"input length {t_in} shorter than kernel {kernel}")
    return (t_in - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """out[b, t, o] = bias[o] + sum_{c,k} x[b, t*stride + k, c] * weight[o, c, k]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ValueError(f"conv1d expects (B, T, C) input and (O, C, K) kernel, got {x.shape}, {weight.shape}")
    B, T_in, C_in = x.shape
    C_out, C_w, K = weight.shape
    if C_w != C_in:
        raise ValueError(f"conv1d expects {C_w} input channels, got {C_in}")
    if bias.shape != (C_out,):
        raise ValueError(f"bias shape {bias.shape} != ({C_out},)")
    T_out = conv1d_output_length(T_in, K, stride)
    # (B, T_out, C_in, K) window view flattened into im2col rows
    cols = sliding_window_view(x.data, K, axis=1)[:, ::stride][:, :T_out]
    cols = cols.reshape(B * T_out, C_in * K)
    w2 = weight.data.reshape(C_out, C_in * K)
    out = cols @ w2.T + bias.data
    out = _check_finite(out.reshape(B, T_out, C_out), "conv1d")

    def backward(g):
        g2 = g.reshape(B * T_out, C_out)
        gw = (g2.T @ cols).reshape(C_out, C_in, K) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(B, T_out, C_in, K)
            gx = np.zeros_like(x.data)
            span = stride * (T_out - 1) + 1
            for k in range(K):
                gx[:, k:k + span:stride, :] += gcols[:, :, :, k]
        return gx, gw, gb

    return _node(out, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return _node(out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.reshape(shape[0], -1)

    def backward(g):
        return (g.reshape(shape),)

    return _node(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x @ weight.T + bias with weight of shape (out, in)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear expects {weight.shape[1]} inputs, got {x.shape[-1]}")
    out = _check_finite(x.data @ weight.data.T + bias.data, "linear")

    def backward(g):
        return (
            g @ weight.data if x.requires_grad else None,
            g.T @ x.data if weight.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return _node(out, (x, weight, bias), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, xs, backward)


def tsum(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum())

    def backward(g):
        return (np.broadcast_to(g, x.shape),)

    return _node(out, (x,), backward)


def weighted_mse(pred: Tensor, target, weights) -> Tensor:
    """Batch mean of sum_f w_f * (pred_f - target_f)**2 / F."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.data.dtype)
    w = np.asarray(weights, dtype=pred.data.dtype)
    if not np.isfinite(pred.data).all() or not np.isfinite(target).all():
        raise FloatingPointError("weighted_mse received non-finite input")
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target
    n_batch = 1 if diff.ndim == 1 else diff.shape[0]
    denom = diff.shape[-1] * n_batch
    out = np.asarray((w * diff * diff).sum() / denom, dtype=pred.data.dtype)

    def backward(g):
        return (g * 2.0 * w * diff / denom,)

    return _node(out, (pred,), backward)


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if root._backward is None:
        raise GraphError("backward called before forward: tensor is not the output of an op")
    if root.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    # iterative post-order DFS; children visited in parent-tuple order
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    seed = np.full(root.shape, 1.0 if grad is None else grad, dtype=root.data.dtype)
    pending: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.data.dtype, copy=True)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = pending.get(id(parent))
            pending[id(parent)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# parameters, optimizer state and checkpoints

CHECKPOINT_MAGIC = b"P2GCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class ModelState:
    """Parameters, Adam moments and the architecture that produced them."""

    arch: dict
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))
            if self.m[name].shape != p.shape or self.v[name].shape != p.shape:
                raise ValueError(f"moment shape mismatch for {name}")

    def copy(self) -> ModelState:
        return ModelState(
            arch=json.loads(json.dumps(self.arch)),
            params={k: v.copy() for k, v in self.params.items()},
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            step=self.step,
            seed=self.seed,
            extra=json.loads(json.dumps(self.extra)),
        )

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        def same(a, b):
            return a.keys() == b.keys() and all(
                a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a
            )
        return (
            self.arch == other.arch and self.step == other.step and self.seed == other.seed
            and self.extra == other.extra
            and same(self.params, other.params) and same(self.m, other.m) and same(self.v, other.v)
        )

    __hash__ = None

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def adam_step(
    state: ModelState,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ModelState:
    """Bias-corrected Adam update, applied in place; returns ``state``."""
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            raise ValueError(f"missing gradient for {name}")
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in state.params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    """Header JSON followed by raw little-endian arrays; byte-stable."""
    arrays = []
    index = []
    for group, table in (("params", state.params), ("m", state.m), ("v", state.v)):
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name])
            dt = arr.dtype.newbyteorder("<")
            index.append({"group": group, "name": name, "dtype": dt.str, "shape": list(arr.shape)})
            arrays.append(arr.astype(dt, copy=False).tobytes())
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": state.arch,
        "step": state.step,
        "seed": state.seed,
        "extra": state.extra,
        "arrays": index,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in arrays:
            fh.write(chunk)


def load_checkpoint(path: str | Path) -> ModelState:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    tables: dict[str, dict[str, np.ndarray]] = {"params": {}, "m": {}, "v": {}}
    for item in header["arrays"]:
        dt = np.dtype(item["dtype"])
        count = int(np.prod(item["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(item["shape"])
        off += count * dt.itemsize
        tables[item["group"]][item["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelState(
        arch=header["arch"], params=tables["params"], m=tables["m"], v=tables["v"],
        step=header["step"], seed=header["seed"], extra=header["extra"],
    )


# ---------------------------------------------------------------------------
# finite-difference checking

def numeric_gradient(f: Callable[[], float], arr: np.ndarray, index, h: float = 1e-5) -> float:
    old = arr[index]
    arr[index] = old + h
    fp = f()
    arr[index] = old - h
    fm = f()
    arr[index] = old
    return (fp - fm) / (2 * h)


def relative_error(analytic: float, numeric: float, atol: float = 1e-8) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < atol:
        return 0.0
    return abs(analytic - numeric) / scale


def gradient_check(
    loss_fn: Callable[[], float],
    arrays: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_entries: int | None = None,
    n_directions: int = 0,
    seed: int = 0,
) -> dict[str, float]:
    """Compare analytic gradients against central differences.

    ``loss_fn`` re-evaluates the loss reading the (mutated) ``arrays``.
    Every entry is checked unless ``max_entries`` caps a random subset per
    array; ``n_directions`` adds random directional-derivative checks that
    cover every entry of an array at once. Returns the max relative error
    per array name.
    """
    rng = np.random.default_rng(seed)
    worst = {}
    for name, arr in arrays.items():
        g = grads[name]
        flat_idx: Iterable[int]
        if max_entries is None or arr.size <= max_entries:
            flat_idx = range(arr.size)
        else:
            flat_idx = np.sort(rng.choice(arr.size, size=max_entries, replace=False))
        err = 0.0
        for i in flat_idx:
            idx = np.unravel_index(int(i), arr.shape)
            num = numeric_gradient(loss_fn, arr, idx, h)
            err = max(err, relative_error(float(g[idx]), num))
        for _ in range(n_directions):
            d = rng.standard_normal(arr.shape)
            d /= np.linalg.norm(d)
            base = arr.copy()
            arr[...] = base + h * d
            fp = loss_fn()
            arr[...] = base - h * d
            fm = loss_fn()
            arr[...] = base
            num = (fp - fm) / (2 * h)
            err = max(err, relative_error(float((g * d).sum()), num))
        worst[name] = err
    return worst
