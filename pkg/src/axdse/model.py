"""Network data model and on-disk manifest I/O.

A network is an ordered list of layers over 8-bit affine-quantized tensors.
Weights live in little-endian raw blobs next to a JSON manifest; the loader
is bit-exact (no re-rounding) and validates every structural invariant.

Layout conventions, fixed once for every producer and consumer:
  * row-major (C order) everywhere; feature maps are [h][w][c]
  * Conv2D weights are [out_c][k_h][k_w][in_c]
  * Dense weights are [out_features][in_features]
  * blobs: weights i8, biases i32, labels u16, float variants f32, all LE

The per-layer fault-site space counts every produced output tensor
(computational outputs and ReLU/pool/flatten outputs are distinct site
groups); the choice is recorded in the manifest's ``meta`` block so results
stay auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ManifestError, UsageError, ValidationError

MODEL_FORMAT = "axnet-1"
DATA_FORMAT = "axdata-1"
FAULT_SITE_SPACE = "per-layer-output"

I8_MIN, I8_MAX = -128, 127


@dataclass(frozen=True)
class QuantParams:
    """Affine quantization: real = scale * (q - zero_point)."""

    scale: float
    zero_point: int

    def __post_init__(self):
        if not (isinstance(self.scale, (int, float)) and np.isfinite(self.scale) and self.scale > 0):
            raise ValidationError(f"qparams scale must be a positive finite real, got {self.scale!r}")
        if not (isinstance(self.zero_point, (int, np.integer)) and I8_MIN <= self.zero_point <= I8_MAX):
            raise ValidationError(f"qparams zero_point must be an integer in [-128, 127], got {self.zero_point!r}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", int(self.zero_point))


@dataclass(frozen=True, eq=False)
class Tensor:
    """A quantized tensor: flat i8 data in row-major order plus its shape."""

    shape: tuple
    data: np.ndarray
    qparams: QuantParams

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s <= 0 for s in shape):
            raise ValidationError(f"tensor shape must be positive integers, got {shape}")
        data = np.ascontiguousarray(self.data, dtype=np.int8)
        if data.ndim != 1 or data.size != int(np.prod(shape)):
            raise ValidationError(
                f"tensor data length {data.size} does not match shape {shape} (expected {int(np.prod(shape))})"
            )
        data.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Dense:
    """Fully connected layer; weights [out_features, in_features]."""

    in_features: int
    out_features: int
    weights: np.ndarray
    bias: np.ndarray
    weight_qparams: QuantParams | None = None
    out_qparams: QuantParams | None = None

    kind = "Dense"

    def __post_init__(self):
        object.__setattr__(self, "weights", _freeze(self.weights))
        object.__setattr__(self, "bias", _freeze(self.bias))


@dataclass(frozen=True, eq=False)
class Conv2D:
    """2-D convolution; weights [out_c, k_h, k_w, in_c], stride applies to both axes."""

    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    stride: int
    padding: str  # "valid" | "same"
    weights: np.ndarray
    bias: np.ndarray
    weight_qparams: QuantParams | None = None
    out_qparams: QuantParams | None = None

    kind = "Conv2D"

    def __post_init__(self):
        object.__setattr__(self, "weights", _freeze(self.weights))
        object.__setattr__(self, "bias", _freeze(self.bias))


@dataclass(frozen=True)
class MaxPool2D:
    pool_h: int
    pool_w: int
    stride: int

    kind = "MaxPool2D"


@dataclass(frozen=True)
class Flatten:
    kind = "Flatten"


@dataclass(frozen=True)
class ReLU:
    kind = "ReLU"


LayerSpec = Union[Dense, Conv2D, MaxPool2D, Flatten, ReLU]

COMPUTATIONAL_KINDS = ("Dense", "Conv2D")


def is_computational(layer: LayerSpec) -> bool:
    return layer.kind in COMPUTATIONAL_KINDS


def output_shape(layer: LayerSpec, input_shape: tuple) -> tuple:
    """Shape produced by `layer` given `input_shape`; raises ValidationError on mismatch."""
    shape = tuple(input_shape)
    if isinstance(layer, Dense):
        if shape != (layer.in_features,):
            raise ValidationError(f"Dense expects input shape ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if isinstance(layer, Conv2D):
        if len(shape) != 3 or shape[2] != layer.in_channels:
            raise ValidationError(f"Conv2D expects [h, w, {layer.in_channels}] input, got {shape}")
        h, w, _ = shape
        if layer.padding == "same":
            oh = -(-h // layer.stride)
            ow = -(-w // layer.stride)
        elif layer.padding == "valid":
            if h < layer.kernel_h or w < layer.kernel_w:
                raise ValidationError(f"Conv2D kernel {layer.kernel_h}x{layer.kernel_w} larger than input {h}x{w}")
            oh = (h - layer.kernel_h) // layer.stride + 1
            ow = (w - layer.kernel_w) // layer.stride + 1
        else:
            raise ValidationError(f"Conv2D padding must be 'valid' or 'same', got {layer.padding!r}")
        return (oh, ow, layer.out_channels)
    if isinstance(layer, MaxPool2D):
        if len(shape) != 3:
            raise ValidationError(f"MaxPool2D expects [h, w, c] input, got {shape}")
        h, w, c = shape
        if h < layer.pool_h or w < layer.pool_w:
            raise ValidationError(f"MaxPool2D window {layer.pool_h}x{layer.pool_w} larger than input {h}x{w}")
        oh = (h - layer.pool_h) // layer.stride + 1
        ow = (w - layer.pool_w) // layer.stride + 1
        return (oh, ow, c)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, ReLU):
        return shape
    raise ValidationError(f"unknown layer kind {layer!r}")


def same_padding(h: int, w: int, kernel_h: int, kernel_w: int, stride: int) -> tuple:
    """(top, bottom, left, right) zero-pad amounts for 'same' conv, TF split convention."""
    oh = -(-h // stride)
    ow = -(-w // stride)
    pad_h = max((oh - 1) * stride + kernel_h - h, 0)
    pad_w = max((ow - 1) * stride + kernel_w - w, 0)
    return pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2


def _validate_layer_arrays(layer: LayerSpec, index: int, quantized: bool) -> None:
    if not is_computational(layer):
        return
    w, b = layer.weights, layer.bias
    if isinstance(layer, Dense):
        expect_w = (layer.out_features, layer.in_features)
        expect_b = layer.out_features
    else:
        expect_w = (layer.out_channels, layer.kernel_h, layer.kernel_w, layer.in_channels)
        expect_b = layer.out_channels
    if tuple(w.shape) != expect_w:
        raise ValidationError(f"layer {index}: weight shape {tuple(w.shape)} does not match declared {expect_w}")
    if b.shape != (expect_b,):
        raise ValidationError(f"layer {index}: bias length {b.size} does not match output count {expect_b}")
    if quantized:
        if w.dtype != np.int8:
            raise ValidationError(f"layer {index}: quantized weights must be int8, got {w.dtype}")
        if b.dtype != np.int32:
            raise ValidationError(f"layer {index}: quantized biases must be int32, got {b.dtype}")
        if layer.weight_qparams is None or layer.out_qparams is None:
            raise ValidationError(f"layer {index}: quantized computational layer needs weight and output qparams")
        if layer.weight_qparams.zero_point != 0:
            raise ValidationError(f"layer {index}: weight quantization must be symmetric (zero_point 0)")
    else:
        if w.dtype != np.float32 or b.dtype != np.float32:
            raise ValidationError(f"layer {index}: float model arrays must be float32")


def _validate_structure(input_shape, layers, num_classes, quantized: bool) -> list:
    """Walk the layer chain, returning every layer's output shape."""
    shape = tuple(int(s) for s in input_shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValidationError(f"input_shape must be positive integers, got {input_shape}")
    shapes = []
    n_comp = 0
    for i, layer in enumerate(layers):
        _validate_layer_arrays(layer, i, quantized)
        try:
            shape = output_shape(layer, shape)
        except ValidationError as e:
            raise ValidationError(f"layer {i}: {e}") from None
        shapes.append(shape)
        if is_computational(layer):
            n_comp += 1
    if n_comp == 0:
        raise ValidationError("model must contain at least one computational layer")
    if shape != (int(num_classes),):
        raise ValidationError(f"final layer produces shape {shape}, expected ({num_classes},) for num_classes")
    return shapes


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Quantized network: immutable after construction, safe to share across workers."""

    name: str
    input_shape: tuple
    input_qparams: QuantParams
    layers: tuple
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "num_classes", int(self.num_classes))
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be positive, got {self.num_classes}")
        shapes = _validate_structure(self.input_shape, self.layers, self.num_classes, quantized=True)
        object.__setattr__(self, "_layer_shapes", tuple(shapes))

    @property
    def layer_shapes(self) -> tuple:
        """Output shape of every layer, in order."""
        return self._layer_shapes

    @property
    def computational_indices(self) -> tuple:
        return tuple(i for i, l in enumerate(self.layers) if is_computational(l))

    @property
    def num_computational(self) -> int:
        return len(self.computational_indices)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled quantized images, all sharing one shape and one set of qparams."""

    images: np.ndarray  # [n, *shape] int8
    labels: np.ndarray  # [n] int
    qparams: QuantParams

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.int8)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim < 2:
            raise ValidationError("images must be [n, *shape]")
        if len(images) == 0:
            raise ValidationError("dataset must be non-empty")
        if labels.shape != (len(images),):
            raise ValidationError(f"labels length {labels.size} != image count {len(images)}")
        if labels.min() < 0:
            raise ValidationError("labels must be non-negative class indices")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def __len__(self) -> int:
        return len(self.images)

    def image(self, i: int) -> Tensor:
        return Tensor(self.shape, self.images[i].ravel(), self.qparams)

    def subset(self, n: int) -> "Dataset":
        if not 1 <= n <= len(self):
            raise UsageError(f"subset size {n} out of range 1..{len(self)}")
        return Dataset(self.images[:n], self.labels[:n], self.qparams)


def mult_count(layer: LayerSpec, input_shape: tuple) -> int:
    """Number of scalar multiplications the layer performs for one input."""
    if isinstance(layer, Dense):
        return layer.in_features * layer.out_features
    if isinstance(layer, Conv2D):
        oh, ow, oc = output_shape(layer, input_shape)
        return oh * ow * oc * layer.kernel_h * layer.kernel_w * layer.in_channels
    raise UsageError(f"mult_count is only defined for computational layers, not {layer.kind}")


def layer_input_shapes(model: NetworkModel) -> tuple:
    """Input shape seen by each layer, in order."""
    return (model.input_shape,) + model.layer_shapes[:-1]


def total_mult_count(model: NetworkModel) -> int:
    return sum(
        mult_count(layer, shp)
        for layer, shp in zip(model.layers, layer_input_shapes(model))
        if is_computational(layer)
    )


def fault_site_count(model: NetworkModel, input_shape: tuple | None = None) -> int:
    """Total single-bit fault sites: 8 per element of every layer's output tensor."""
    if input_shape is not None and tuple(input_shape) != model.input_shape:
        raise UsageError(f"input_shape {tuple(input_shape)} does not match model input {model.input_shape}")
    return sum(int(np.prod(s)) * 8 for s in model.layer_shapes)


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

_BLOB_DTYPES = {"i8": "<i1", "i32": "<i4", "u16": "<u2", "f32": "<f4"}


def _req(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise ManifestError(f"{ctx}: missing field '{key}'")
    return obj[key]


def _qparams_from_json(obj, ctx: str) -> QuantParams:
    if not isinstance(obj, dict):
        raise ManifestError(f"{ctx}: expected an object with scale/zero_point")
    try:
        return QuantParams(float(_req(obj, "scale", ctx)), int(_req(obj, "zero_point", ctx)))
    except (TypeError, ValueError) as e:
        raise ManifestError(f"{ctx}: invalid qparams ({e})") from None


def _qparams_to_json(q: QuantParams) -> dict:
    return {"scale": q.scale, "zero_point": q.zero_point}


def _read_blob(base: Path, ref: dict, dtype_key: str, ctx: str) -> np.ndarray:
    fname = _req(ref, "file", ctx)
    shape = tuple(int(s) for s in _req(ref, "shape", ctx))
    path = base / fname
    if not path.is_file():
        raise FileNotFoundError(f"{ctx}: blob file not found: {path}")
    data = np.fromfile(path, dtype=_BLOB_DTYPES[dtype_key])
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValidationError(f"{ctx}: blob {fname} holds {data.size} entries, expected {expected} for shape {list(shape)}")
    return data.reshape(shape)


def _layer_from_json(obj: dict, index: int, base: Path, dtype: str):
    ctx = f"layers[{index}]"
    kind = _req(obj, "kind", ctx)
    quantized = dtype == "i8"
    w_dt, b_dt = ("i8", "i32") if quantized else ("f32", "f32")
    if kind == "Dense":
        weights = _read_blob(base, _req(obj, "weights", ctx), w_dt, ctx)
        bias = _read_blob(base, _req(obj, "bias", ctx), b_dt, ctx)
        return Dense(
            in_features=int(_req(obj, "in_features", ctx)),
            out_features=int(_req(obj, "out_features", ctx)),
            weights=weights,
            bias=bias,
            weight_qparams=_qparams_from_json(_req(obj, "weights", ctx).get("qparams"), ctx) if quantized else None,
            out_qparams=_qparams_from_json(_req(obj, "out_qparams", ctx), ctx) if quantized else None,
        )
    if kind == "Conv2D":
        weights = _read_blob(base, _req(obj, "weights", ctx), w_dt, ctx)
        bias = _read_blob(base, _req(obj, "bias", ctx), b_dt, ctx)
        return Conv2D(
            kernel_h=int(_req(obj, "kernel_h", ctx)),
            kernel_w=int(_req(obj, "kernel_w", ctx)),
            in_channels=int(_req(obj, "in_channels", ctx)),
            out_channels=int(_req(obj, "out_channels", ctx)),
            stride=int(_req(obj, "stride", ctx)),
            padding=str(_req(obj, "padding", ctx)),
            weights=weights,
            bias=bias,
            weight_qparams=_qparams_from_json(_req(obj, "weights", ctx).get("qparams"), ctx) if quantized else None,
            out_qparams=_qparams_from_json(_req(obj, "out_qparams", ctx), ctx) if quantized else None,
        )
    if kind == "MaxPool2D":
        return MaxPool2D(
            pool_h=int(_req(obj, "pool_h", ctx)),
            pool_w=int(_req(obj, "pool_w", ctx)),
            stride=int(_req(obj, "stride", ctx)),
        )
    if kind == "Flatten":
        return Flatten()
    if kind == "ReLU":
        return ReLU()
    raise ManifestError(f"{ctx}: unknown layer kind '{kind}'")


def _load_manifest(manifest_path, expect_dtype: str):
    path = Path(manifest_path)
    if not path.is_file():
        raise FileNotFoundError(f"model manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path.name}: not valid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{path.name}: top level must be an object")
    dtype = _req(doc, "dtype", path.name)
    if dtype != expect_dtype:
        raise ManifestError(f"{path.name}: field 'dtype' is '{dtype}', expected '{expect_dtype}'")
    layers_json = _req(doc, "layers", path.name)
    if not isinstance(layers_json, list):
        raise ManifestError(f"{path.name}: field 'layers' must be a list")
    base = path.parent
    layers = [_layer_from_json(obj, i, base, dtype) for i, obj in enumerate(layers_json)]
    return doc, layers


def load_model(manifest_path) -> NetworkModel:
    """Load a quantized network manifest (dtype 'i8'); bit-exact, fully validated."""
    doc, layers = _load_manifest(manifest_path, "i8")
    name = Path(manifest_path).name
    return NetworkModel(
        name=str(_req(doc, "name", name)),
        input_shape=tuple(_req(doc, "input_shape", name)),
        input_qparams=_qparams_from_json(_req(doc, "input_qparams", name), name),
        layers=layers,
        num_classes=int(_req(doc, "num_classes", name)),
        meta=dict(doc.get("meta", {})),
    )


def _layer_to_json(layer: LayerSpec, index: int, stem: str, base: Path, quantized: bool) -> dict:
    obj: dict = {"kind": layer.kind}
    if isinstance(layer, Dense):
        obj["in_features"] = layer.in_features
        obj["out_features"] = layer.out_features
    elif isinstance(layer, Conv2D):
        obj.update(
            kernel_h=layer.kernel_h,
            kernel_w=layer.kernel_w,
            in_channels=layer.in_channels,
            out_channels=layer.out_channels,
            stride=layer.stride,
            padding=layer.padding,
        )
    elif isinstance(layer, MaxPool2D):
        obj.update(pool_h=layer.pool_h, pool_w=layer.pool_w, stride=layer.stride)
    if is_computational(layer):
        w_name = f"{stem}.layer{index}.weights.bin"
        b_name = f"{stem}.layer{index}.bias.bin"
        w = layer.weights.astype("<i1" if quantized else "<f4", copy=False)
        b = layer.bias.astype("<i4" if quantized else "<f4", copy=False)
        w.tofile(base / w_name)
        b.tofile(base / b_name)
        obj["weights"] = {"file": w_name, "shape": list(layer.weights.shape)}
        if quantized:
            obj["weights"]["qparams"] = _qparams_to_json(layer.weight_qparams)
            obj["out_qparams"] = _qparams_to_json(layer.out_qparams)
        obj["bias"] = {"file": b_name, "shape": [int(layer.bias.size)]}
    return obj


def _write_canonical_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_model(model: NetworkModel, manifest_path) -> Path:
    """Write the canonical manifest + blobs; saving then loading round-trips byte-for-byte."""
    path = Path(manifest_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    meta = dict(model.meta)
    meta.setdefault("fault_site_space", FAULT_SITE_SPACE)
    doc = {
        "format": MODEL_FORMAT,
        "dtype": "i8",
        "name": model.name,
        "input_shape": list(model.input_shape),
        "input_qparams": _qparams_to_json(model.input_qparams),
        "num_classes": model.num_classes,
        "meta": meta,
        "layers": [
            _layer_to_json(layer, i, stem, path.parent, quantized=True) for i, layer in enumerate(model.layers)
        ],
    }
    _write_canonical_json(doc, path)
    return path


def load_dataset(data_path) -> Dataset:
    """Load a quantized dataset (data.json, dtype 'i8')."""
    path = Path(data_path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path.name}: not valid JSON ({e})") from None
    name = path.name
    dtype = _req(doc, "dtype", name)
    if dtype != "i8":
        raise ManifestError(f"{name}: field 'dtype' is '{dtype}', expected 'i8' (quantize float data first)")
    count = int(_req(doc, "count", name))
    shape = tuple(int(s) for s in _req(doc, "shape", name))
    qparams = _qparams_from_json(_req(doc, "qparams", name), name)
    images = _read_blob(path.parent, {"file": _req(_req(doc, "images", name), "file", name), "shape": [count] + list(shape)}, "i8", name)
    labels = _read_blob(path.parent, {"file": _req(_req(doc, "labels", name), "file", name), "shape": [count]}, "u16", name)
    return Dataset(images=images, labels=labels.astype(np.int64), qparams=qparams)


def save_dataset(dataset: Dataset, data_path, meta: dict | None = None) -> Path:
    path = Path(data_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    img_name, lbl_name = f"{stem}.images.bin", f"{stem}.labels.bin"
    dataset.images.astype("<i1", copy=False).tofile(path.parent / img_name)
    dataset.labels.astype("<u2", copy=False).tofile(path.parent / lbl_name)
    doc = {
        "format": DATA_FORMAT,
        "dtype": "i8",
        "count": len(dataset),
        "shape": list(dataset.shape),
        "qparams": _qparams_to_json(dataset.qparams),
        "images": {"file": img_name},
        "labels": {"file": lbl_name},
        "meta": meta or {},
    }
    _write_canonical_json(doc, path)
    return path
