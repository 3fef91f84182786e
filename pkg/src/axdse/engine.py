"""Quantized inference with per-layer multiplier routing and bit-flip faults.

Every product inside Dense/Conv2D goes through the layer's assigned
multiplier as a gather from its 65536-entry product table. Accumulation is
int64 (sums for the supported layer sizes fit i32 comfortably; the wider
type removes any overflow concern at zero cost). The affine zero-point
algebra is

    acc[o] = sum_k M(x_q[k], w_q[o,k]) - zp_in * sum_k w_q[o,k] + bias_q[o]

where the correction term is an exactly precomputed constant (in hardware a
compile-time fold) and padded positions feed the multiplier the value zp_in.
For the exact multiplier this is algebraically identical to the standard
affine convolution.

Requantization: round_half_to_even(acc * s_in*s_w/s_out) + zp_out, saturated
to i8. ReLU is max(zero_point, x) on the producing layer's output; MaxPool
compares raw quantized values (all window inputs share one QuantParams).

A fault is one bit of one element of one layer's output tensor, XOR-flipped
after that tensor is produced and before anything consumes it. The flipped
value is not re-clamped. Activations are stored flat ([n, size] per layer),
so a fault site's element_index addresses the row-major tensor directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .model import (
    I8_MAX,
    I8_MIN,
    Conv2D,
    Dataset,
    Dense,
    Flatten,
    MaxPool2D,
    NetworkModel,
    QuantParams,
    ReLU,
    Tensor,
    is_computational,
    layer_input_shapes,
    same_padding,
)
from .multipliers import ExactMultiplier, MultiplierModel

# cap on gathered product-table elements per chunk (i16, so ~64 MB)
_GATHER_ELEMS = 32 << 20


@dataclass(frozen=True)
class FaultSite:
    """One bit of one element of one layer's output tensor."""

    layer_index: int
    element_index: int
    bit: int


class ApproxConfig:
    """Per-computational-layer multiplier assignment.

    The mask string covers all layers: '1' approximated, '0' exact,
    '-' non-computational.
    """

    def __init__(self, assignments):
        assignments = tuple(assignments)
        for m in assignments:
            if not isinstance(m, MultiplierModel):
                raise UsageError(f"assignment must be a MultiplierModel, got {type(m).__name__}")
        self.assignments = assignments

    @classmethod
    def all_exact(cls, model: NetworkModel) -> "ApproxConfig":
        return cls((ExactMultiplier(),) * model.num_computational)

    @classmethod
    def uniform(cls, model: NetworkModel, mult: MultiplierModel, approx_flags=None) -> "ApproxConfig":
        """Assign `mult` where approx_flags (one bool per computational layer) is true."""
        n = model.num_computational
        if approx_flags is None:
            approx_flags = (True,) * n
        flags = tuple(bool(f) for f in approx_flags)
        if len(flags) != n:
            raise UsageError(f"need {n} per-computational-layer flags, got {len(flags)}")
        exact = ExactMultiplier()
        return cls(tuple(mult if f else exact for f in flags))

    @classmethod
    def from_mask(cls, model: NetworkModel, mask: str, mult: MultiplierModel) -> "ApproxConfig":
        if len(mask) != len(model.layers):
            raise UsageError(f"mask length {len(mask)} != layer count {len(model.layers)}")
        flags = []
        for i, (ch, layer) in enumerate(zip(mask, model.layers)):
            if is_computational(layer):
                if ch == "1":
                    flags.append(True)
                elif ch == "0":
                    flags.append(False)
                else:
                    raise UsageError(f"mask[{i}] must be '0' or '1' for computational layer {layer.kind}, got {ch!r}")
            elif ch != "-":
                raise UsageError(f"mask[{i}] must be '-' for non-computational layer {layer.kind}, got {ch!r}")
        return cls.uniform(model, mult, flags)

    def validate(self, model: NetworkModel) -> None:
        if len(self.assignments) != model.num_computational:
            raise UsageError(
                f"config assigns {len(self.assignments)} multipliers, model has "
                f"{model.num_computational} computational layers"
            )

    def mask(self, model: NetworkModel) -> str:
        self.validate(model)
        out = []
        it = iter(self.assignments)
        for layer in model.layers:
            if is_computational(layer):
                out.append("0" if next(it).kind == "Exact" else "1")
            else:
                out.append("-")
        return "".join(out)

    def multiplier_ids(self) -> tuple:
        return tuple(m.id for m in self.assignments)

    def __repr__(self):
        return f"ApproxConfig({', '.join(self.multiplier_ids())})"


def _requant(acc: np.ndarray, scale: float, zp_out: int) -> np.ndarray:
    y = np.rint(acc.astype(np.float64) * scale) + zp_out
    np.clip(y, I8_MIN, I8_MAX, out=y)
    return y.astype(np.int8)


class _DenseStep:
    def __init__(self, layer: Dense, in_q: QuantParams, table: np.ndarray):
        self.table = table
        self.widx = layer.weights.astype(np.int32) + 128  # [out, in]
        self.corr = in_q.zero_point * layer.weights.astype(np.int64).sum(axis=1)
        self.bias = layer.bias.astype(np.int64)
        self.scale = in_q.scale * layer.weight_qparams.scale / layer.out_qparams.scale
        self.zp_out = layer.out_qparams.zero_point
        self.in_size = layer.in_features
        self.out_size = layer.out_features

    def run(self, x: np.ndarray) -> np.ndarray:
        n = len(x)
        xi = (x.astype(np.int32) + 128) * 256  # [n, in]
        out = np.empty((n, self.out_size), np.int8)
        chunk = max(1, _GATHER_ELEMS // (self.in_size * self.out_size))
        for s in range(0, n, chunk):
            e = min(n, s + chunk)
            prods = self.table[xi[s:e, None, :] + self.widx[None, :, :]]
            acc = prods.sum(axis=2, dtype=np.int64) - self.corr + self.bias
            out[s:e] = _requant(acc, self.scale, self.zp_out)
        return out


class _ConvStep:
    def __init__(self, layer: Conv2D, in_shape: tuple, in_q: QuantParams, table: np.ndarray):
        h, w, c = in_shape
        if layer.padding == "same":
            top, bottom, left, right = same_padding(h, w, layer.kernel_h, layer.kernel_w, layer.stride)
        else:
            top = bottom = left = right = 0
        ph, pw = h + top + bottom, w + left + right
        oh = (ph - layer.kernel_h) // layer.stride + 1
        ow = (pw - layer.kernel_w) // layer.stride + 1
        # flat gather indices [P, K] into the padded image; the K axis iterates
        # (ky, kx, ci) to line up with the kernel's [out_c, kh, kw, in_c] layout
        rows = np.arange(oh)[:, None, None, None, None] * layer.stride + np.arange(layer.kernel_h)[None, None, :, None, None]
        cols = np.arange(ow)[None, :, None, None, None] * layer.stride + np.arange(layer.kernel_w)[None, None, None, :, None]
        chan = np.arange(c)[None, None, None, None, :]
        self.patch_idx = ((rows * pw + cols) * c + chan).reshape(oh * ow, -1)
        self.table = table
        self.widx = layer.weights.reshape(layer.out_channels, -1).astype(np.int32) + 128  # [out_c, K]
        self.corr = in_q.zero_point * layer.weights.astype(np.int64).reshape(layer.out_channels, -1).sum(axis=1)
        self.bias = layer.bias.astype(np.int64)
        self.scale = in_q.scale * layer.weight_qparams.scale / layer.out_qparams.scale
        self.zp_out = layer.out_qparams.zero_point
        self.zp_in = in_q.zero_point
        self.in_shape = (h, w, c)
        self.pads = (top, left)
        self.padded_shape = (ph, pw)
        self.out_c = layer.out_channels
        self.n_patches = oh * ow
        self.k = self.widx.shape[1]

    def run(self, x: np.ndarray) -> np.ndarray:
        n = len(x)
        h, w, c = self.in_shape
        ph, pw = self.padded_shape
        if (ph, pw) == (h, w):
            flat = x
        else:
            top, left = self.pads
            padded = np.full((n, ph, pw, c), np.int8(self.zp_in), np.int8)
            padded[:, top : top + h, left : left + w, :] = x.reshape(n, h, w, c)
            flat = padded.reshape(n, -1)
        patches = (flat[:, self.patch_idx].astype(np.int32) + 128) * 256  # [n, P, K]
        out = np.empty((n, self.n_patches * self.out_c), np.int8)
        chunk = max(1, _GATHER_ELEMS // (self.n_patches * self.out_c * self.k))
        for s in range(0, n, chunk):
            e = min(n, s + chunk)
            prods = self.table[patches[s:e, :, None, :] + self.widx[None, None, :, :]]
            acc = prods.sum(axis=3, dtype=np.int64) - self.corr + self.bias  # [*, P, out_c]
            out[s:e] = _requant(acc, self.scale, self.zp_out).reshape(e - s, -1)
        return out


class _PoolStep:
    def __init__(self, layer: MaxPool2D, in_shape: tuple):
        self.in_shape = in_shape
        self.pool = (layer.pool_h, layer.pool_w)
        self.stride = layer.stride

    def run(self, x: np.ndarray) -> np.ndarray:
        n = len(x)
        img = x.reshape((n,) + self.in_shape)
        win = np.lib.stride_tricks.sliding_window_view(img, self.pool, axis=(1, 2))
        win = win[:, :: self.stride, :: self.stride]
        return np.ascontiguousarray(win.max(axis=(4, 5)).reshape(n, -1))


class _ReluStep:
    def __init__(self, zero_point: int):
        self.zp = np.int8(zero_point)

    def run(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, self.zp)


class _FlattenStep:
    @staticmethod
    def run(x: np.ndarray) -> np.ndarray:
        return x


class Evaluator:
    """Compiled (model, config) pair; immutable and reentrant after init.

    `predict` runs batches; `cache_activations` + `predict_from_cache` let a
    fault campaign reuse the fault-free prefix below each injection site.
    """

    def __init__(self, model: NetworkModel, cfg: ApproxConfig):
        cfg.validate(model)
        self.model = model
        self.cfg = cfg
        self.layer_sizes = tuple(int(np.prod(s)) for s in model.layer_shapes)
        self.input_size = int(np.prod(model.input_shape))
        steps = []
        mults = iter(cfg.assignments)
        cur_q = model.input_qparams
        for layer, in_shape in zip(model.layers, layer_input_shapes(model)):
            if isinstance(layer, Dense):
                steps.append(_DenseStep(layer, cur_q, next(mults).product_table()))
                cur_q = layer.out_qparams
            elif isinstance(layer, Conv2D):
                steps.append(_ConvStep(layer, in_shape, cur_q, next(mults).product_table()))
                cur_q = layer.out_qparams
            elif isinstance(layer, MaxPool2D):
                steps.append(_PoolStep(layer, in_shape))
            elif isinstance(layer, ReLU):
                steps.append(_ReluStep(cur_q.zero_point))
            elif isinstance(layer, Flatten):
                steps.append(_FlattenStep())
            else:
                raise UsageError(f"unsupported layer kind {layer.kind}")
        self.steps = tuple(steps)

    # -- fault plumbing ------------------------------------------------------

    def _check_site(self, site: FaultSite) -> None:
        if not 0 <= site.layer_index < len(self.steps):
            raise UsageError(f"fault layer_index {site.layer_index} out of range 0..{len(self.steps) - 1}")
        size = self.layer_sizes[site.layer_index]
        if not 0 <= site.element_index < size:
            raise UsageError(
                f"fault element_index {site.element_index} out of range for layer "
                f"{site.layer_index} (size {size})"
            )
        if not 0 <= site.bit <= 7:
            raise UsageError(f"fault bit {site.bit} out of range 0..7")

    def _group_flips(self, fault) -> dict:
        if fault is None:
            return {}
        sites = [fault] if isinstance(fault, FaultSite) else list(fault)
        groups: dict = {}
        for site in sites:
            self._check_site(site)
            groups.setdefault(site.layer_index, []).append((site.element_index, site.bit))
        return groups

    @staticmethod
    def _apply_flips(x: np.ndarray, flips) -> np.ndarray:
        out = x.copy()
        view = out.view(np.uint8)
        for elem, bit in flips:
            view[:, elem] ^= np.uint8(1 << bit)
        return out

    # -- execution -----------------------------------------------------------

    def _coerce_batch(self, images) -> np.ndarray:
        arr = np.asarray(images)
        if arr.dtype != np.int8:
            raise UsageError(f"images must be int8, got {arr.dtype}")
        if arr.ndim == 1:
            arr = arr[None, :]
        flat = arr.reshape(len(arr), -1)
        if flat.shape[1] != self.input_size:
            raise UsageError(
                f"input has {flat.shape[1]} elements per image, model expects "
                f"{self.input_size} (shape {self.model.input_shape})"
            )
        return flat

    def _run(self, x: np.ndarray, flips: dict, start: int, record=None):
        for i in range(start, len(self.steps)):
            x = self.steps[i].run(x)
            if i in flips:
                x = self._apply_flips(x, flips[i])
            if record is not None:
                record.append(x.copy())
        return x

    def logits(self, images, fault=None) -> np.ndarray:
        x = self._coerce_batch(images)
        return self._run(x, self._group_flips(fault), 0)

    def predict(self, images, fault=None) -> np.ndarray:
        """Class index per image; ties go to the lowest index."""
        return np.argmax(self.logits(images, fault), axis=1)

    def trace(self, image, fault=None) -> list:
        """Every layer's (possibly faulted) flat output for one image."""
        x = self._coerce_batch(image)
        record: list = []
        self._run(x, self._group_flips(fault), 0, record=record)
        return [r[0] for r in record]

    def correct_count(self, dataset: Dataset, fault=None) -> int:
        self._check_dataset(dataset)
        return int(np.count_nonzero(self.predict(dataset.images, fault) == dataset.labels))

    def accuracy(self, dataset: Dataset, fault=None) -> float:
        return self.correct_count(dataset, fault) / len(dataset)

    def _check_dataset(self, dataset: Dataset) -> None:
        if len(dataset) == 0:
            raise UsageError("dataset is empty")
        if dataset.shape != self.model.input_shape and int(np.prod(dataset.shape)) != self.input_size:
            raise UsageError(f"dataset shape {dataset.shape} does not match model input {self.model.input_shape}")
        if dataset.qparams != self.model.input_qparams:
            raise UsageError(
                f"dataset qparams {dataset.qparams} differ from model input qparams "
                f"{self.model.input_qparams}; requantize the data for this model"
            )

    # -- campaign support ------------------------------------------------------

    def cache_activations(self, dataset: Dataset) -> list:
        """Fault-free flat output of every layer over the whole dataset."""
        self._check_dataset(dataset)
        x = self._coerce_batch(dataset.images)
        record: list = []
        for step in self.steps:
            x = step.run(x)
            record.append(x)
        for arr in record:
            arr.flags.writeable = False
        return record

    def predict_from_cache(self, cache: list, fault: FaultSite) -> np.ndarray:
        """Predictions with `fault`, restarting from the cached fault-free prefix."""
        self._check_site(fault)
        x = self._apply_flips(cache[fault.layer_index], [(fault.element_index, fault.bit)])
        x = self._run(x, {}, fault.layer_index + 1)
        return np.argmax(x, axis=1)


def forward(model: NetworkModel, image, cfg: ApproxConfig, fault=None) -> int:
    """Predicted class for one image (Tensor or int8 array)."""
    if isinstance(image, Tensor):
        if image.qparams != model.input_qparams:
            raise UsageError("input tensor qparams do not match the model's input qparams")
        data = image.data
    else:
        data = image
    return int(Evaluator(model, cfg).predict(data, fault)[0])


def evaluate_accuracy(model: NetworkModel, dataset: Dataset, cfg: ApproxConfig, fault=None) -> float:
    return Evaluator(model, cfg).accuracy(dataset, fault)
