"""Small numpy MLPs with hand-written backprop, Adam, Polyak averaging and checkpoints.

Every network keeps its parameters in one flat float64 vector; the layer
weights are reshaped views into it, so optimizers and target copies work
on the flat vector directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HIDDEN_WIDTH = 256
HIDDEN_LAYERS = 2
CHECKPOINT_MAGIC = b"CVXNET"
CHECKPOINT_VERSION = 1


def relu(x):
    return np.maximum(x, 0.0)


class Mlp:
    """Fully connected net ``in -> hidden* -> out`` with ReLU between layers.

    Inputs are batches of shape ``(B, in)``; the output layer is linear.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None, params: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("an Mlp needs at least an input and an output size")
        n = sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))
        self.params = np.zeros(n) if params is None else np.array(params, dtype=float)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")
        self.layers = self._views(self.params)
        if params is None and rng is not None:
            self.init(rng)

    def _views(self, flat):
        layers, off = [], 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            W = flat[off : off + i * o].reshape(i, o)
            off += i * o
            b = flat[off : off + o]
            off += o
            layers.append((W, b))
        return layers

    def init(self, rng: np.random.Generator) -> None:
        # uniform fan-in scaling, as in torch.nn.Linear
        for W, b in self.layers:
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    @property
    def n_params(self) -> int:
        return self.params.size

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, params=self.params.copy())

    def forward(self, x: np.ndarray, params: np.ndarray | None = None):
        """Return ``(output, cache)``; ``params`` overrides the stored weights."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} does not match {self.sizes[0]}")
        layers = self.layers if params is None else self._views(params)
        cache = [x]
        h = x
        for k, (W, b) in enumerate(layers):
            z = h @ W + b
            h = relu(z) if k < len(layers) - 1 else z
            cache.append(z)
        return h, cache

    def __call__(self, x, params=None) -> np.ndarray:
        return self.forward(x, params)[0]

    def backward(self, cache, grad_out: np.ndarray, params: np.ndarray | None = None):
        """Reverse-mode pass; returns ``(flat parameter gradient, input gradient)``."""
        layers = self.layers if params is None else self._views(params)
        grad = np.zeros_like(self.params)
        gviews = self._views(grad)
        g = np.atleast_2d(grad_out)
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            inp = cache[k] if k == 0 else relu(cache[k])
            gW, gb = gviews[k]
            gW[...] = inp.T @ g
            gb[...] = g.sum(axis=0)
            g = g @ W.T
            if k > 0:
                g = g * (cache[k] > 0)
        return grad, g


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def categorical_head(logits: np.ndarray):
    """Probabilities and log-probabilities of a categorical over the last axis."""
    logp = log_softmax(np.asarray(logits, dtype=float))
    return np.exp(logp), logp


def log_prob_grad(logits: np.ndarray, k) -> np.ndarray:
    """Gradient of ``log softmax(logits)[k]`` with respect to the logits."""
    grad = -softmax(np.asarray(logits, dtype=float))
    if grad.ndim == 1:
        grad[k] += 1.0
    else:
        grad[np.arange(grad.shape[0]), k] += 1.0
    return grad


def split_blocks(x: np.ndarray, sizes) -> list[np.ndarray]:
    return np.split(x, np.cumsum(sizes)[:-1], axis=-1)


def one_hot_blocks(components: np.ndarray, sizes) -> np.ndarray:
    """Batch of component index rows -> concatenated one-hot rows."""
    comps = np.atleast_2d(np.asarray(components, dtype=int))
    out = np.zeros((comps.shape[0], int(sum(sizes))))
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    rows = np.arange(comps.shape[0])[:, None]
    out[rows, offsets[None, :] + comps] = 1.0
    return out


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> None:
    params -= lr * grads


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads * grads
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


class TargetPair:
    """An online network and a slowly tracking target copy."""

    def __init__(self, online: Mlp, tau: float):
        if not 0.0 < tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {tau}")
        self.online = online
        self.target = online.copy()
        self.tau = tau

    def update(self) -> None:
        polyak(self.target.params, self.online.params, self.tau)


def polyak(target: np.ndarray, online: np.ndarray, tau: float) -> None:
    if target.shape != online.shape:
        raise ValueError("target and online parameter shapes differ")
    target *= 1.0 - tau
    target += tau * online


# checkpoints


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write a versioned binary file: magic, JSON header line, raw float64 payload."""
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}, "arrays": []}
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        header["arrays"].append({"name": name, "shape": list(arr.shape)})
        payload.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for chunk in payload:
            fh.write(chunk)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.readline().rstrip(b"\n") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a network checkpoint")
        header = json.loads(fh.readline())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        arrays = {}
        for entry in header["arrays"]:
            n = int(np.prod(entry["shape"], dtype=int))
            buf = fh.read(8 * n)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).copy()
    return arrays, header["meta"]
