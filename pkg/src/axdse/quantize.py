"""Post-training quantization of float32 networks to the 8-bit model format.

Scheme (uniform affine, round-half-to-even throughout):
  * activations: asymmetric per-tensor, range calibrated over a held-out set
    and widened to include zero so the zero point is exactly representable
  * weights: symmetric per-tensor (zero point 0), scale = max|w| / 127
  * biases: int32 at scale s_in * s_w with zero point 0

Calibration runs the float network once over the calibration images and
records each layer's observed min/max. A degenerate range (min == max == 0)
falls back to [-1e-6, 1e-6] so scales stay positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ManifestError, ValidationError
from .model import (
    Conv2D,
    Dataset,
    Dense,
    Flatten,
    I8_MAX,
    I8_MIN,
    MaxPool2D,
    NetworkModel,
    QuantParams,
    ReLU,
    _load_manifest,
    _qparams_from_json,
    _qparams_to_json,
    _read_blob,
    _req,
    _layer_to_json,
    _validate_structure,
    _write_canonical_json,
    is_computational,
    output_shape,
    same_padding,
    DATA_FORMAT,
    MODEL_FORMAT,
)


@dataclass(frozen=True, eq=False)
class FloatModel:
    """float32 network with the same layer vocabulary as the quantized format."""

    name: str
    input_shape: tuple
    layers: tuple
    num_classes: int
    meta: dict

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = _validate_structure(self.input_shape, self.layers, self.num_classes, quantized=False)
        object.__setattr__(self, "_layer_shapes", tuple(shapes))

    @property
    def layer_shapes(self) -> tuple:
        return self._layer_shapes


@dataclass(frozen=True, eq=False)
class FloatDataset:
    images: np.ndarray  # [n, *shape] float32
    labels: np.ndarray  # [n]

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim < 2 or len(images) == 0:
            raise ValidationError("images must be a non-empty [n, *shape] array")
        if labels.shape != (len(images),):
            raise ValidationError(f"labels length {labels.size} != image count {len(images)}")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def __len__(self) -> int:
        return len(self.images)


def load_float_model(manifest_path) -> FloatModel:
    doc, layers = _load_manifest(manifest_path, "f32")
    name = Path(manifest_path).name
    return FloatModel(
        name=str(_req(doc, "name", name)),
        input_shape=tuple(_req(doc, "input_shape", name)),
        layers=tuple(layers),
        num_classes=int(_req(doc, "num_classes", name)),
        meta=dict(doc.get("meta", {})),
    )


def save_float_model(model: FloatModel, manifest_path) -> Path:
    path = Path(manifest_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": MODEL_FORMAT,
        "dtype": "f32",
        "name": model.name,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "meta": dict(model.meta),
        "layers": [
            _layer_to_json(layer, i, path.stem, path.parent, quantized=False)
            for i, layer in enumerate(model.layers)
        ],
    }
    _write_canonical_json(doc, path)
    return path


def load_float_dataset(data_path) -> FloatDataset:
    path = Path(data_path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path.name}: not valid JSON ({e})") from None
    name = path.name
    dtype = _req(doc, "dtype", name)
    if dtype != "f32":
        raise ManifestError(f"{name}: field 'dtype' is '{dtype}', expected 'f32'")
    count = int(_req(doc, "count", name))
    shape = tuple(int(s) for s in _req(doc, "shape", name))
    images = _read_blob(path.parent, {"file": _req(_req(doc, "images", name), "file", name), "shape": [count] + list(shape)}, "f32", name)
    labels = _read_blob(path.parent, {"file": _req(_req(doc, "labels", name), "file", name), "shape": [count]}, "u16", name)
    return FloatDataset(images=images, labels=labels.astype(np.int64))


def save_float_dataset(dataset: FloatDataset, data_path, meta: dict | None = None) -> Path:
    path = Path(data_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    img_name, lbl_name = f"{stem}.images.bin", f"{stem}.labels.bin"
    dataset.images.astype("<f4", copy=False).tofile(path.parent / img_name)
    dataset.labels.astype("<u2", copy=False).tofile(path.parent / lbl_name)
    doc = {
        "format": DATA_FORMAT,
        "dtype": "f32",
        "count": len(dataset),
        "shape": list(dataset.shape),
        "images": {"file": img_name},
        "labels": {"file": lbl_name},
        "meta": meta or {},
    }
    _write_canonical_json(doc, path)
    return path


# ---------------------------------------------------------------------------
# Float inference (calibration reference)
# ---------------------------------------------------------------------------

def _float_conv2d(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    h, w, _ = x.shape
    if layer.padding == "same":
        top, bottom, left, right = same_padding(h, w, layer.kernel_h, layer.kernel_w, layer.stride)
        x = np.pad(x, ((top, bottom), (left, right), (0, 0)))
        h, w = x.shape[:2]
    oh = (h - layer.kernel_h) // layer.stride + 1
    ow = (w - layer.kernel_w) // layer.stride + 1
    patches = np.lib.stride_tricks.sliding_window_view(x, (layer.kernel_h, layer.kernel_w), axis=(0, 1))
    patches = patches[:: layer.stride, :: layer.stride]  # [oh, ow, in_c, kh, kw]
    patches = patches.transpose(0, 1, 3, 4, 2).reshape(oh * ow, -1)  # [oh*ow, kh*kw*in_c]
    kernel = layer.weights.reshape(layer.out_channels, -1)  # [out_c, kh*kw*in_c]
    out = patches @ kernel.T + layer.bias
    return out.reshape(oh, ow, layer.out_channels)


def _float_maxpool(x: np.ndarray, layer: MaxPool2D) -> np.ndarray:
    h, w, c = x.shape
    oh = (h - layer.pool_h) // layer.stride + 1
    ow = (w - layer.pool_w) // layer.stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (layer.pool_h, layer.pool_w), axis=(0, 1))
    windows = windows[:: layer.stride, :: layer.stride]
    return windows.max(axis=(3, 4)).reshape(oh, ow, c)


def float_forward(model: FloatModel, image: np.ndarray, record=None) -> np.ndarray:
    """Run one image through the float network; `record` collects per-layer outputs."""
    x = np.asarray(image, dtype=np.float32).reshape(model.input_shape)
    for layer in model.layers:
        if isinstance(layer, Dense):
            x = layer.weights @ x + layer.bias
        elif isinstance(layer, Conv2D):
            x = _float_conv2d(x, layer)
        elif isinstance(layer, MaxPool2D):
            x = _float_maxpool(x, layer)
        elif isinstance(layer, Flatten):
            x = x.reshape(-1)
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0.0)
        if record is not None:
            record.append(x)
    return x


def float_accuracy(model: FloatModel, dataset: FloatDataset) -> float:
    correct = 0
    for img, label in zip(dataset.images, dataset.labels):
        logits = float_forward(model, img)
        if int(np.argmax(logits)) == int(label):
            correct += 1
    return correct / len(dataset)


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

def activation_qparams(lo: float, hi: float) -> QuantParams:
    """Asymmetric i8 qparams covering [lo, hi], widened to include zero."""
    lo, hi = float(min(lo, 0.0)), float(max(hi, 0.0))
    if lo == hi:  # all-zero activations: pick a tiny symmetric range
        lo, hi = -1e-6, 1e-6
    scale = (hi - lo) / 255.0
    zp = int(np.rint(I8_MIN - lo / scale))
    zp = max(I8_MIN, min(I8_MAX, zp))
    return QuantParams(scale, zp)


def weight_qparams(weights: np.ndarray) -> QuantParams:
    """Symmetric i8 qparams for a weight tensor."""
    m = float(np.max(np.abs(weights)))
    if m == 0.0:
        m = 1e-6
    return QuantParams(m / 127.0, 0)


def quantize_value(x, q: QuantParams) -> np.ndarray:
    """Affine-quantize to i8 with round-half-to-even and saturation."""
    v = np.rint(np.asarray(x, dtype=np.float64) / q.scale) + q.zero_point
    return np.clip(v, I8_MIN, I8_MAX).astype(np.int8)


def dequantize_value(q_arr, q: QuantParams) -> np.ndarray:
    return (np.asarray(q_arr, dtype=np.float64) - q.zero_point) * q.scale


def calibrate(model: FloatModel, images: np.ndarray) -> list:
    """Observed (min, max) of the input and every layer output over `images`."""
    n_layers = len(model.layers)
    lo = np.full(n_layers + 1, np.inf)
    hi = np.full(n_layers + 1, -np.inf)
    for img in images:
        lo[0] = min(lo[0], float(np.min(img)))
        hi[0] = max(hi[0], float(np.max(img)))
        rec: list = []
        float_forward(model, img, record=rec)
        for i, out in enumerate(rec):
            lo[i + 1] = min(lo[i + 1], float(np.min(out)))
            hi[i + 1] = max(hi[i + 1], float(np.max(out)))
    return [(float(a), float(b)) for a, b in zip(lo, hi)]


def quantize_model(model: FloatModel, calib_images: np.ndarray, name: str | None = None) -> NetworkModel:
    """Quantize a float model using activations observed on `calib_images`.

    Non-computational layers reuse their input's qparams: ReLU output is the
    clamp max(zp, x) in the quantized domain, and pooling/flatten only move
    values around, so re-deriving a range would add avoidable error.
    """
    if len(calib_images) == 0:
        raise ValidationError("calibration set must be non-empty")
    ranges = calibrate(model, np.asarray(calib_images, dtype=np.float32))
    act_q = [activation_qparams(lo, hi) for lo, hi in ranges]

    # carry input qparams through non-computational layers
    qparams_in: list[QuantParams] = []
    cur = act_q[0]
    for i, layer in enumerate(model.layers):
        qparams_in.append(cur)
        cur = act_q[i + 1] if is_computational(layer) else cur

    layers = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense) or isinstance(layer, Conv2D):
            in_q = qparams_in[i]
            w_q = weight_qparams(layer.weights)
            out_q = act_q[i + 1]
            wq = quantize_value(layer.weights, w_q)
            bias_scale = in_q.scale * w_q.scale
            bq = np.clip(
                np.rint(layer.bias.astype(np.float64) / bias_scale),
                np.iinfo(np.int32).min,
                np.iinfo(np.int32).max,
            ).astype(np.int32)
            if isinstance(layer, Dense):
                layers.append(
                    Dense(layer.in_features, layer.out_features, wq, bq, weight_qparams=w_q, out_qparams=out_q)
                )
            else:
                layers.append(
                    Conv2D(
                        layer.kernel_h,
                        layer.kernel_w,
                        layer.in_channels,
                        layer.out_channels,
                        layer.stride,
                        layer.padding,
                        wq,
                        bq,
                        weight_qparams=w_q,
                        out_qparams=out_q,
                    )
                )
        else:
            layers.append(layer)

    return NetworkModel(
        name=name or model.name,
        input_shape=model.input_shape,
        input_qparams=act_q[0],
        layers=tuple(layers),
        num_classes=model.num_classes,
        meta=dict(model.meta),
    )


def quantize_dataset(dataset: FloatDataset, qparams: QuantParams) -> Dataset:
    return Dataset(
        images=quantize_value(dataset.images, qparams),
        labels=dataset.labels,
        qparams=qparams,
    )
