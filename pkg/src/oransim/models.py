"""The two interference classifiers and their on-disk ``.orml`` format.

File layout (all integers little-endian)::

    b"ORML" | version u8 | descriptor length u32 | descriptor (UTF-8 JSON)
            | parameter count u32 | parameters as float32

The descriptor holds the input shape and the layer list; parameters are the
concatenation of every (weight, bias) pair in layer order, each flattened in
C order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import Conv2D, Dense, Flatten, MaxPool2D, Model, init_model, softmax_t

SPEC_INPUT_SHAPE = (128, 128, 1)
SPEC_PARAM_COUNT = 163_922
KPM_DEFAULT_M = 4
KPM_DEFAULT_T = 15
KPM_DEFAULT_HIDDEN = (80, 20)

# class indices shared by both models
SOI = 0
CWI = 1
CLASS_NAMES = ("SOI", "CWI")

MAGIC = b"ORML"
FORMAT_VERSION = 1


def spec_layers() -> tuple:
    return (
        Conv2D(16, (3, 3), "relu"),
        MaxPool2D((2, 2)),
        Conv2D(16, (3, 3), "relu"),
        MaxPool2D((2, 2)),
        Conv2D(32, (3, 3), "relu"),
        MaxPool2D((2, 2)),
        Conv2D(32, (3, 3), "relu"),
        Flatten(),
        Dense(32, "relu"),
        Dense(2, "linear"),
    )


def build_spec_model(seed: int = 0) -> Model:
    """CNN for 128x128 grayscale spectrograms (163,922 parameters)."""
    return init_model(spec_layers(), SPEC_INPUT_SHAPE, seed)


def kpm_layers(hidden_sizes: Sequence[int]) -> tuple:
    if len(hidden_sizes) == 0:
        raise ValueError("hidden_sizes must be non-empty")
    return tuple(Dense(int(h), "relu") for h in hidden_sizes) + (Dense(2, "linear"),)


def build_kpm_model(m: int = KPM_DEFAULT_M, t: int = KPM_DEFAULT_T,
                    hidden_sizes: Sequence[int] = KPM_DEFAULT_HIDDEN, seed: int = 0) -> Model:
    """Dense KPM classifier taking ``m`` metrics over ``t`` stacked windows."""
    if m < 1 or t < 1:
        raise ValueError("m and t must be >= 1")
    return init_model(kpm_layers(hidden_sizes), (m * t,), seed)


def predict(model: Model, x) -> tuple[int, np.ndarray]:
    """Class index and T=1 probability vector for one example."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} does not match model input {model.input_shape}")
    probs = softmax_t(model.forward(x), 1.0)
    return int(np.argmax(probs)), probs


def predict_batch(model: Model, X, batch_size: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != model.input_shape:
        raise ValueError(f"input shape {X.shape[1:]} does not match model input {model.input_shape}")
    out = [np.argmax(model.forward(X[s:s + batch_size]), axis=-1) for s in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def accuracy(model: Model, X, y) -> float:
    """(TP + TN) / (TP + TN + FP + FN) over a labeled set."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    return float(np.mean(predict_batch(model, X) == y))


# -- serialization -------------------------------------------------------------

def _layer_to_dict(layer) -> dict:
    if isinstance(layer, Conv2D):
        return {"kind": "Conv2D", "filters": layer.filters, "kernel": list(layer.kernel),
                "activation": layer.activation}
    if isinstance(layer, MaxPool2D):
        return {"kind": "MaxPool2D", "pool": list(layer.pool)}
    if isinstance(layer, Flatten):
        return {"kind": "Flatten"}
    return {"kind": "Dense", "size": layer.size, "activation": layer.activation}


def _layer_from_dict(d: dict):
    kind = d["kind"]
    if kind == "Conv2D":
        return Conv2D(d["filters"], tuple(d["kernel"]), d["activation"])
    if kind == "MaxPool2D":
        return MaxPool2D(tuple(d["pool"]))
    if kind == "Flatten":
        return Flatten()
    if kind == "Dense":
        return Dense(d["size"], d["activation"])
    raise ValueError(f"unknown layer kind {kind!r}")


def dumps(model: Model) -> bytes:
    desc = json.dumps({"input_shape": list(model.input_shape),
                       "layers": [_layer_to_dict(l) for l in model.layers]},
                      sort_keys=True, separators=(",", ":")).encode()
    flat = [a.ravel() for p in model.params if p is not None for a in p]
    values = np.concatenate(flat).astype("<f4") if flat else np.zeros(0, "<f4")
    return (MAGIC + struct.pack("<BI", FORMAT_VERSION, len(desc)) + desc
            + struct.pack("<I", values.size) + values.tobytes())


def loads(data: bytes) -> Model:
    if data[:4] != MAGIC:
        raise ValueError("not an ORML model file")
    version, dlen = struct.unpack_from("<BI", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported ORML version {version}")
    off = 9
    desc = json.loads(data[off:off + dlen].decode())
    off += dlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    values = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float64)
    skeleton = init_model([_layer_from_dict(d) for d in desc["layers"]], desc["input_shape"], 0)
    if count != skeleton.param_count():
        raise ValueError("parameter count does not match descriptor")
    params, pos = [], 0
    for p in skeleton.params:
        if p is None:
            params.append(None)
            continue
        w = values[pos:pos + p[0].size].reshape(p[0].shape)
        pos += p[0].size
        b = values[pos:pos + p[1].size].reshape(p[1].shape)
        pos += p[1].size
        params.append((w.copy(), b.copy()))
    return Model(skeleton.layers, skeleton.input_shape, params)


def save(model: Model, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model))
    return path


def load(path) -> Model:
    return loads(Path(path).read_bytes())
