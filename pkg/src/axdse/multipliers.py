"""Behavioral models of exact and approximate 8-bit signed multipliers.

Every multiplier is characterized by its full 65536-entry product table,
indexed by (a + 128) * 256 + (b + 128). Error metrics are exhaustive over
that table and expressed as percentages:

    MAE% = mean |err| / 16384 * 100      (16384 = max |product|, (-128)^2)
    WCE% = max  |err| / 16384 * 100
    MRE% = mean of |err| / |exact| * 100 over pairs whose exact product != 0
    EP%  = fraction of pairs with err != 0, * 100

Absolute-error sums are accumulated in 64-bit integers so the metrics are
bit-identical however the pair space is partitioned.

External lookup-table multipliers load from `.mul8s` files: raw little-endian
int16, exactly 65536 entries, same index convention. An optional JSON sidecar
(`<name>.json` with power_mw / area_um2) carries cost coefficients; without
one, a small table of published EvoApprox values is consulted by file stem.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path

import numpy as np

from .errors import ManifestError, UsageError, ValidationError

TABLE_SIZE = 65536
MAX_ABS_PRODUCT = 16384
LUT_FILE_BYTES = TABLE_SIZE * 2

# Cost coefficients (power mW, area um2) for a synthesized 8-bit multiplier.
EXACT_POWER_MW = 0.425
EXACT_AREA_UM2 = 729.8

# Published costs for EvoApprox signed 8-bit multipliers, keyed by file stem,
# used when a loaded LUT has no sidecar. A sidecar always wins.
KNOWN_LUT_COSTS = {
    "mul8s_1KVP": (0.363, 635.0),
    "mul8s_1KV9": (0.410, 685.2),
    "mul8s_1KV8": (0.422, 711.0),
}


@functools.lru_cache(maxsize=1)
def exact_product_table() -> np.ndarray:
    vals = np.arange(-128, 128, dtype=np.int16)
    table = np.multiply.outer(vals, vals).ravel()
    table.flags.writeable = False
    return table


def table_index(a, b):
    """Flat table index for operands a (first) and b (second)."""
    return (np.asarray(a, dtype=np.int32) + 128) * 256 + (np.asarray(b, dtype=np.int32) + 128)


class MultiplierModel:
    """An 8-bit signed multiplier, immutable after construction.

    Subclasses define `_build_table`; the table is built once on first use
    and shared read-only, so `multiply` is reentrant.
    """

    kind = "Abstract"

    def __init__(self, mult_id: str, power_mw: float | None = None, area_um2: float | None = None):
        self.id = str(mult_id)
        self.power_mw = None if power_mw is None else float(power_mw)
        self.area_um2 = None if area_um2 is None else float(area_um2)
        self._table: np.ndarray | None = None

    def _build_table(self) -> np.ndarray:
        raise NotImplementedError

    def product_table(self) -> np.ndarray:
        if self._table is None:
            table = np.ascontiguousarray(self._build_table(), dtype=np.int16)
            if table.shape != (TABLE_SIZE,):
                raise ValidationError(f"multiplier '{self.id}': product table must have {TABLE_SIZE} entries")
            table.flags.writeable = False
            self._table = table
        return self._table

    def multiply(self, a, b):
        """Product(s) of i8 operands as i32; scalar in, scalar out."""
        a_arr = np.asarray(a)
        b_arr = np.asarray(b)
        if a_arr.dtype != np.int8 or b_arr.dtype != np.int8:
            for name, arr in (("a", a_arr), ("b", b_arr)):
                if not np.issubdtype(arr.dtype, np.integer):
                    raise UsageError(f"operand {name} must be integer, got dtype {arr.dtype}")
                if arr.size and (arr.min() < -128 or arr.max() > 127):
                    raise UsageError(f"operand {name} outside the i8 range [-128, 127]")
        out = self.product_table()[table_index(a_arr, b_arr)].astype(np.int32)
        if np.isscalar(a) and np.isscalar(b):
            return int(out)
        return out

    def with_costs(self, power_mw: float, area_um2: float) -> "MultiplierModel":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.power_mw = float(power_mw)
        clone.area_um2 = float(area_um2)
        return clone

    def __repr__(self):
        return f"<{type(self).__name__} {self.id}>"


class ExactMultiplier(MultiplierModel):
    kind = "Exact"

    def __init__(self):
        super().__init__("exact", EXACT_POWER_MW, EXACT_AREA_UM2)

    def _build_table(self):
        return exact_product_table()


class TruncatedMultiplier(MultiplierModel):
    """Zeroes the k low bits of both operands (two's complement) before multiplying."""

    kind = "TruncK"

    def __init__(self, k: int):
        if not 1 <= int(k) <= 7:
            raise UsageError(f"truncation width must be in [1, 7], got {k}")
        self.k = int(k)
        # Stand-in cost coefficients: scale the exact multiplier's costs by
        # the squared fraction of retained operand bits. They exist so the
        # builtin family exercises the cost model without external data; use
        # LUTs with sidecar profiles for synthesized numbers.
        factor = (8 - self.k) ** 2 / 64
        super().__init__(f"trunc{self.k}", EXACT_POWER_MW * factor, EXACT_AREA_UM2 * factor)

    def _build_table(self):
        vals = np.arange(-128, 128, dtype=np.int8)
        trunc = (vals & np.int8(-(1 << self.k))).astype(np.int16)
        return np.multiply.outer(trunc, trunc).ravel()


class LutMultiplier(MultiplierModel):
    kind = "Lut"

    def __init__(self, mult_id: str, table: np.ndarray, power_mw=None, area_um2=None):
        super().__init__(mult_id, power_mw, area_um2)
        table = np.ascontiguousarray(table, dtype=np.int16)
        if table.shape != (TABLE_SIZE,):
            raise ValidationError(f"multiplier '{self.id}': LUT must have exactly {TABLE_SIZE} entries, got {table.size}")
        bad = np.flatnonzero((table < -MAX_ABS_PRODUCT) | (table > MAX_ABS_PRODUCT))
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"multiplier '{self.id}': table entry {int(table[i])} at index {i} "
                f"outside the product range [-{MAX_ABS_PRODUCT}, {MAX_ABS_PRODUCT}]"
            )
        table.flags.writeable = False
        self._table = table

    def _build_table(self):
        return self._table


class MultiplierProfile:
    """Exhaustive error metrics plus cost coefficients of one multiplier."""

    __slots__ = ("id", "mae_pct", "wce_pct", "mre_pct", "ep_pct", "power_mw", "area_um2")

    def __init__(self, id, mae_pct, wce_pct, mre_pct, ep_pct, power_mw=None, area_um2=None):
        self.id = id
        self.mae_pct = float(mae_pct)
        self.wce_pct = float(wce_pct)
        self.mre_pct = float(mre_pct)
        self.ep_pct = float(ep_pct)
        self.power_mw = power_mw
        self.area_um2 = area_um2
        if not 0.0 <= self.ep_pct <= 100.0:
            raise ValidationError(f"ep_pct out of [0, 100]: {self.ep_pct}")
        if not 0.0 <= self.mae_pct <= self.wce_pct:
            raise ValidationError(f"profile needs wce_pct >= mae_pct >= 0, got mae={self.mae_pct} wce={self.wce_pct}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mae_pct": self.mae_pct,
            "wce_pct": self.wce_pct,
            "mre_pct": self.mre_pct,
            "ep_pct": self.ep_pct,
            "power_mw": self.power_mw,
            "area_um2": self.area_um2,
            "mre_rule": "mean over pairs with exact product != 0",
        }


def characterize(mult: MultiplierModel) -> MultiplierProfile:
    """Exhaustive MAE/WCE/MRE/EP over all 65536 operand pairs."""
    err = mult.product_table().astype(np.int64) - exact_product_table().astype(np.int64)
    abs_err = np.abs(err)
    mae = int(abs_err.sum()) / TABLE_SIZE / MAX_ABS_PRODUCT * 100.0
    wce = int(abs_err.max()) / MAX_ABS_PRODUCT * 100.0
    exact = exact_product_table().astype(np.int64)
    nz = exact != 0
    mre = float(np.sum(abs_err[nz] / np.abs(exact[nz]).astype(np.float64))) / int(nz.sum()) * 100.0
    ep = int(np.count_nonzero(err)) / TABLE_SIZE * 100.0
    return MultiplierProfile(mult.id, mae, wce, mre, ep, mult.power_mw, mult.area_um2)


def save_lut(mult: MultiplierModel, path) -> Path:
    path = Path(path)
    mult.product_table().astype("<i2", copy=False).tofile(path)
    return path


def load_lut(path, power_mw=None, area_um2=None) -> LutMultiplier:
    """Load a `.mul8s` table file; sidecar `<stem>.json` may supply costs."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"LUT file not found: {path}")
    size = path.stat().st_size
    if size != LUT_FILE_BYTES:
        raise ManifestError(f"{path.name}: LUT file must be exactly {LUT_FILE_BYTES} bytes (65536 x i16 LE), got {size}")
    table = np.fromfile(path, dtype="<i2")
    if power_mw is None and area_um2 is None:
        sidecar = path.with_suffix(".json")
        if sidecar.is_file():
            try:
                doc = json.loads(sidecar.read_text())
                power_mw = float(doc["power_mw"])
                area_um2 = float(doc["area_um2"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ManifestError(f"{sidecar.name}: invalid profile sidecar ({e})") from None
        elif path.stem in KNOWN_LUT_COSTS:
            power_mw, area_um2 = KNOWN_LUT_COSTS[path.stem]
    return LutMultiplier(path.stem, table, power_mw, area_um2)


BUILTIN_NAMES = ("exact",) + tuple(f"trunc{k}" for k in range(1, 8))


def builtin_multiplier(name: str) -> MultiplierModel:
    if name == "exact":
        return ExactMultiplier()
    if name.startswith("trunc") and name[5:].isdigit():
        return TruncatedMultiplier(int(name[5:]))
    raise UsageError(f"unknown builtin multiplier '{name}' (available: {', '.join(BUILTIN_NAMES)})")


def resolve_multiplier(spec: str) -> MultiplierModel:
    """A builtin name ('exact', 'trunc1'..'trunc7') or a path to a .mul8s file."""
    text = str(spec)
    if text in BUILTIN_NAMES:
        return builtin_multiplier(text)
    if text.endswith(".mul8s"):
        return load_lut(text)
    raise UsageError(f"multiplier spec '{text}' is neither a builtin name nor a .mul8s path")
