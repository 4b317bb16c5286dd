"""Tabular MLP classifier: three ReLU+dropout hidden layers and a linear output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = "east-mlp-v1"
HIDDEN_WIDTHS = (512, 256, 128)


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray], dropout: float, seed=None, meta=None) -> "MlpParams":
        return cls([np.array(a) for a in arrays[0::2]], [np.array(a) for a in arrays[1::2]],
                   dropout, seed, dict(meta or {}))

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays(self.arrays(), self.dropout, self.seed, self.meta)

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays()))


def init(input_dim: int, d: int, dropout: float = 0.0, seed: int = 0,
         hidden: tuple[int, ...] = HIDDEN_WIDTHS) -> MlpParams:
    """Uniform fan-in initialisation (bound ``sqrt(1/fan_in)``) with zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be at least 1")
    if d < 2:
        raise ValueError("need at least two classes")
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout must lie in [0, 1)")
    if len(hidden) != 3 or any(h < 1 for h in hidden):
        raise ValueError("expected three positive hidden widths")
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, d]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, float(dropout), seed)


def dropout_masks(params: MlpParams, batch: int, rng: np.random.Generator) -> list[np.ndarray] | None:
    """Inverted-dropout masks for the three hidden layers, or None when dropout is off."""
    rate = params.dropout
    if rate == 0.0:
        return None
    keep = 1.0 - rate
    return [(rng.random((batch, w.shape[1])) < keep) / keep for w in params.weights[:-1]]


def logits_op(leaves: list[ad.Tensor], x: np.ndarray, masks: list[np.ndarray] | None = None) -> ad.Tensor:
    """Affine/ReLU/dropout stack over parameter tensors ordered as ``MlpParams.arrays()``."""
    h = ad.Tensor(x)
    n_layers = len(leaves) // 2
    for i in range(n_layers):
        h = ad.matmul(h, leaves[2 * i]) + leaves[2 * i + 1]
        if i < n_layers - 1:
            h = ad.relu(h)
            if masks is not None:
                h = ad.dropout(h, masks[i])
    return h


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ad.ShapeError("mlp-forward", x.shape, (None, params.input_dim))
    return x


def forward_op(params: MlpParams, x, leaves: list[ad.Tensor] | None = None,
               train_mode: bool = False, rng: np.random.Generator | None = None) -> ad.Tensor:
    """Probability rows as a graph node.

    ``leaves`` lets the caller supply the parameter tensors (for gradients);
    by default constants wrapping ``params`` are used.
    """
    x = _check_input(params, x)
    if leaves is None:
        leaves = [ad.Tensor(a) for a in params.arrays()]
    masks = None
    if train_mode:
        if rng is None:
            raise ValueError("train_mode forward needs an rng for dropout")
        masks = dropout_masks(params, x.shape[0], rng)
    return ad.softmax(logits_op(leaves, x, masks))


def forward(params: MlpParams, x, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    return forward_op(params, x, train_mode=train_mode, rng=rng).data


def predict_proba(params: MlpParams, x, batch_size: int = 8192) -> np.ndarray:
    x = _check_input(params, x)
    return np.concatenate([forward(params, x[i:i + batch_size])
                           for i in range(0, max(len(x), 1), batch_size)])


# --------------------------------------------------------------------------
# checkpoints

def _header(params: MlpParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "widths": params.widths,
        "dropout": params.dropout,
        "seed": params.seed,
        "meta": params.meta,
    }


def save(params: MlpParams, path) -> Path:
    """Write a checkpoint: JSON for ``*.json`` paths, otherwise a binary npz container."""
    path = Path(path)
    header = _header(params)
    if path.suffix == ".json":
        header["shapes"] = [list(a.shape) for a in params.arrays()]
        header["values"] = [a.reshape(-1).tolist() for a in params.arrays()]
        path.write_text(json.dumps(header))
    else:
        arrays = {f"p{i}": a for i, a in enumerate(params.arrays())}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), **arrays)
    return path


def load(path) -> MlpParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:1] == b"{":
        header = json.loads(raw)
        arrays = [np.array(v, dtype=np.float64).reshape(s)
                  for v, s in zip(header["values"], header["shapes"])]
    else:
        with np.load(path, allow_pickle=False) as npz:
            header = json.loads(str(npz["header"]))
            arrays = [npz[f"p{i}"] for i in range(2 * (len(header["widths"]) - 1))]
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    params = MlpParams.from_arrays(arrays, header["dropout"], header.get("seed"), header.get("meta"))
    if params.widths != list(header["widths"]):
        raise ValueError("checkpoint widths do not match stored arrays")
    return params
