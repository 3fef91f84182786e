"""Configuration enumeration, cost proxies, point evaluation, Pareto frontier.

Cost proxies are linear in per-layer multiplication counts with per-multiplier
coefficients (power mW, area um2); the latency proxy is the plain
multiplication count, identical across configurations of one model. These
are ranking proxies, not synthesis results.

The enumerator emits one configuration per (multiplier, non-empty layer mask)
pair plus a single all-exact baseline: |M| * (2^n - 1) + 1 points for n
computational layers. Every configuration uses one multiplier uniformly on
its masked layers; mixed assignments are representable by ApproxConfig but
not enumerated.

All campaigns inside a DSE run share one plan (same master seed), so every
configuration is measured against the same fault-site sequence; this pairs
the comparisons and keeps runs reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import ApproxConfig, Evaluator
from .errors import UsageError, ValidationError
from .faultsim import CampaignPlan, run_campaign
from .model import Dataset, NetworkModel, is_computational, layer_input_shapes, mult_count
from .multipliers import MultiplierModel

ENUMERATION_CAP = 20

OBJECTIVE_FIELDS = ("approx_drop_pct", "fi_drop_pct", "area_proxy", "power_proxy", "latency_proxy")
DEFAULT_OBJECTIVES = (("area_proxy", "min"), ("fi_drop_pct", "min"))

CSV_HEADER = ("multiplier", "mask", "approx_drop_pct", "fi_drop_pct", "area_proxy", "power_proxy", "latency_proxy")


@dataclass(frozen=True)
class CostProxies:
    area_proxy: float
    power_proxy: float
    latency_proxy: int

    def __post_init__(self):
        if self.area_proxy < 0 or self.power_proxy < 0 or self.latency_proxy < 0:
            raise ValidationError("cost proxies must be non-negative")


@dataclass(frozen=True)
class DesignPoint:
    cfg: ApproxConfig
    multiplier_id: str
    mask: str
    base_accuracy: float
    axdnn_accuracy: float
    mean_faulty_accuracy: float
    costs: CostProxies

    @property
    def approx_drop_pct(self) -> float:
        """Accuracy lost to approximation: exact network minus this network, in points."""
        return (self.base_accuracy - self.axdnn_accuracy) * 100.0

    @property
    def fi_drop_pct(self) -> float:
        """Accuracy lost to faults on this network, in points (its fault vulnerability)."""
        return (self.axdnn_accuracy - self.mean_faulty_accuracy) * 100.0

    @property
    def area_proxy(self) -> float:
        return self.costs.area_proxy

    @property
    def power_proxy(self) -> float:
        return self.costs.power_proxy

    @property
    def latency_proxy(self) -> int:
        return self.costs.latency_proxy


def cost_proxies(model: NetworkModel, cfg: ApproxConfig) -> CostProxies:
    cfg.validate(model)
    area = 0.0
    power = 0.0
    latency = 0
    assignments = iter(cfg.assignments)
    for layer, in_shape in zip(model.layers, layer_input_shapes(model)):
        if not is_computational(layer):
            continue
        mult = next(assignments)
        if mult.area_um2 is None or mult.power_mw is None:
            raise UsageError(f"multiplier '{mult.id}' has no cost coefficients; supply a profile sidecar")
        n = mult_count(layer, in_shape)
        area += n * mult.area_um2
        power += n * mult.power_mw
        latency += n
    return CostProxies(area, power, latency)


def _config_multiplier_id(cfg: ApproxConfig) -> str:
    ids = []
    for m in cfg.assignments:
        if m.kind != "Exact" and m.id not in ids:
            ids.append(m.id)
    return ",".join(ids) if ids else "exact"


def enumerate_configs(model: NetworkModel, multipliers, cap: int = ENUMERATION_CAP) -> list:
    """All-exact baseline plus every (multiplier, non-empty mask) combination."""
    multipliers = list(multipliers)
    if not multipliers:
        raise UsageError("need at least one multiplier")
    n = model.num_computational
    if n > cap:
        raise UsageError(
            f"{n} computational layers would enumerate {len(multipliers)} * (2^{n} - 1) + 1 "
            f"configurations (cap {cap}); use sample_configs instead"
        )
    configs = [ApproxConfig.all_exact(model)]
    for mult in multipliers:
        for bits in range(1, 1 << n):
            flags = [bool((bits >> j) & 1) for j in range(n)]
            configs.append(ApproxConfig.uniform(model, mult, flags))
    return configs


def sample_configs(model: NetworkModel, multipliers, count: int, seed: int) -> list:
    """Baseline plus `count` random (multiplier, non-empty mask) configurations.

    For models beyond the enumeration cap. Draws are independent and may
    repeat; the draw sequence is fixed by `seed`.
    """
    multipliers = list(multipliers)
    if not multipliers:
        raise UsageError("need at least one multiplier")
    if count < 1:
        raise UsageError(f"count must be >= 1, got {count}")
    n = model.num_computational
    rng = np.random.Generator(np.random.Philox(key=seed))
    configs = [ApproxConfig.all_exact(model)]
    for _ in range(count):
        mult = multipliers[int(rng.integers(0, len(multipliers)))]
        bits = 0
        while bits == 0:
            bits = int(rng.integers(1, 1 << n)) if n <= 62 else int.from_bytes(rng.bytes((n + 7) // 8), "little") % (1 << n)
        flags = [bool((bits >> j) & 1) for j in range(n)]
        configs.append(ApproxConfig.uniform(model, mult, flags))
    return configs


def evaluate_point(
    model: NetworkModel,
    dataset: Dataset,
    cfg: ApproxConfig,
    plan: CampaignPlan,
    threads: int | None = None,
    base_accuracy: float | None = None,
) -> DesignPoint:
    """Fault-free accuracy, fault campaign, and cost proxies for one configuration."""
    campaign = run_campaign(model, dataset, cfg, plan, threads=threads)
    if base_accuracy is None:
        base_accuracy = Evaluator(model, ApproxConfig.all_exact(model)).accuracy(dataset)
    return DesignPoint(
        cfg=cfg,
        multiplier_id=_config_multiplier_id(cfg),
        mask=cfg.mask(model),
        base_accuracy=base_accuracy,
        axdnn_accuracy=campaign.baseline_accuracy,
        mean_faulty_accuracy=campaign.mean_faulty_accuracy,
        costs=cost_proxies(model, cfg),
    )


def run_dse(
    model: NetworkModel,
    dataset: Dataset,
    multipliers,
    plan: CampaignPlan,
    threads: int | None = None,
    configs=None,
) -> list:
    """Evaluate every configuration with a shared plan; deterministic order."""
    if configs is None:
        configs = enumerate_configs(model, multipliers)
    base_accuracy = Evaluator(model, ApproxConfig.all_exact(model)).accuracy(dataset)
    return [
        evaluate_point(model, dataset, cfg, plan, threads=threads, base_accuracy=base_accuracy)
        for cfg in configs
    ]


# ---------------------------------------------------------------------------
# Pareto frontier
# ---------------------------------------------------------------------------

def parse_objectives(text: str) -> tuple:
    """Parse 'field:dir,field:dir' pairs, e.g. 'area_proxy:min,fi_drop_pct:min'."""
    objectives = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        field, sep, direction = part.partition(":")
        if not sep or direction not in ("min", "max"):
            raise UsageError(f"objective '{part}' must look like 'field:min' or 'field:max'")
        if field not in OBJECTIVE_FIELDS:
            raise UsageError(f"unknown objective field '{field}' (known: {', '.join(OBJECTIVE_FIELDS)})")
        objectives.append((field, direction))
    if len(objectives) < 2:
        raise UsageError("need at least two objectives")
    return tuple(objectives)


def _objective_matrix(points, objectives) -> np.ndarray:
    values = np.empty((len(points), len(objectives)), dtype=np.float64)
    for j, (field, direction) in enumerate(objectives):
        if direction not in ("min", "max"):
            raise UsageError(f"objective direction must be 'min' or 'max', got {direction!r}")
        try:
            col = [float(getattr(p, field)) for p in points]
        except AttributeError:
            raise UsageError(f"unknown objective field '{field}'") from None
        values[:, j] = col
        if direction == "max":
            values[:, j] = -values[:, j]
    return values


def pareto_frontier(points, objectives=DEFAULT_OBJECTIVES, keep_duplicates: bool = True) -> list:
    """The non-dominated subset, ordered by the first objective (stable).

    A point is dominated when some other point is at least as good in every
    objective and strictly better in one. Points with identical objective
    vectors dominate nothing strictly; all are kept unless keep_duplicates
    is false, which keeps the first of each duplicate group.
    """
    points = list(points)
    if not points:
        raise UsageError("need at least one point")
    objectives = tuple(objectives)
    if len(objectives) < 2:
        raise UsageError("need at least two objectives")
    values = _objective_matrix(points, objectives)
    keep = []
    seen = set()
    for i in range(len(points)):
        row = values[i]
        dominated = bool(np.any(np.all(values <= row, axis=1) & np.any(values < row, axis=1)))
        if dominated:
            continue
        if not keep_duplicates:
            key = tuple(row.tolist())
            if key in seen:
                continue
            seen.add(key)
        keep.append(i)
    keep.sort(key=lambda i: values[i, 0])
    return [points[i] for i in keep]


def trend_violations(points, field: str = "area_proxy") -> list:
    """(wider, narrower) same-multiplier pairs where approximating a superset
    of layers did not lower `field`. Diagnostic only; linear proxies with a
    cheaper-than-exact multiplier cannot violate it, synthesized costs can.
    """
    ones = {id(p): frozenset(i for i, ch in enumerate(p.mask) if ch == "1") for p in points}
    out = []
    for a in points:
        for b in points:
            if a is b or (a.multiplier_id != b.multiplier_id and b.multiplier_id != "exact"):
                continue
            sa, sb = ones[id(a)], ones[id(b)]
            if sb < sa and getattr(a, field) > getattr(b, field) + 1e-9:
                out.append((a, b))
    return out


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def point_row(p) -> list:
    """Formatted CSV/stdout cells; one formatting rule for every writer."""
    return [
        p.multiplier_id,
        p.mask,
        f"{p.approx_drop_pct:.4f}",
        f"{p.fi_drop_pct:.4f}",
        f"{p.area_proxy:.4f}",
        f"{p.power_proxy:.4f}",
        str(int(p.latency_proxy)),
    ]


def write_points_csv(points, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for p in points:
            writer.writerow(point_row(p))
    return path


class CsvPoint:
    """A points.csv row: numeric attributes for frontier math, cells for re-emission."""

    __slots__ = ("multiplier_id", "mask", "approx_drop_pct", "fi_drop_pct", "area_proxy", "power_proxy", "latency_proxy")

    def __init__(self, row):
        self.multiplier_id = row[0]
        self.mask = row[1]
        self.approx_drop_pct = float(row[2])
        self.fi_drop_pct = float(row[3])
        self.area_proxy = float(row[4])
        self.power_proxy = float(row[5])
        self.latency_proxy = int(row[6])


def read_points_csv(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"points file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValidationError(f"{path.name}: expected header {','.join(CSV_HEADER)}")
    points = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise ValidationError(f"{path.name}: line {i} has {len(row)} fields, expected {len(CSV_HEADER)}")
        try:
            points.append(CsvPoint(row))
        except ValueError as e:
            raise ValidationError(f"{path.name}: line {i}: {e}") from None
    return points
