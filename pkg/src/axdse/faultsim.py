"""Statistical fault-injection campaigns over a model's activation bits.

Sample sizes follow the standard statistical fault-injection formula

    n = ceil( N / (1 + e^2 (N - 1) / (t^2 p (1 - p))) )

with worst-case p = 0.5, margin e, and t the two-sided normal quantile of
the confidence level. The population N is the model's full fault-site count
(every bit of every layer's output tensor).

Campaigns are deterministic and schedule-independent: repetition i draws its
fault site from a counter-based generator keyed by (master_seed, i), the
fault-free activations are computed once and shared read-only, and results
reduce in repetition order. Running with 1 or 64 threads yields identical
reports.

Accuracy means are formed from integer correct-counts via exact rationals,
so mean_faulty_accuracy is the correctly rounded mean, not a float
accumulation.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .engine import ApproxConfig, Evaluator, FaultSite
from .errors import UsageError
from .model import Dataset, NetworkModel, _write_canonical_json, fault_site_count

DEFAULT_CONFIDENCE = 0.95
DEFAULT_MARGIN = 0.01
CALIBRATION_GRID = (100, 200, 400, 600, 800, 1000, 1500, 2000)

_SEED_LIMIT = 1 << 64


@dataclass(frozen=True)
class CampaignPlan:
    repetitions: int
    master_seed: int
    confidence: float = DEFAULT_CONFIDENCE
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not (isinstance(self.repetitions, (int, np.integer)) and self.repetitions >= 1):
            raise UsageError(f"repetitions must be a positive integer, got {self.repetitions!r}")
        if not (isinstance(self.master_seed, (int, np.integer)) and 0 <= self.master_seed < _SEED_LIMIT):
            raise UsageError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed!r}")
        if not 0.0 < self.confidence < 1.0:
            raise UsageError(f"confidence must be in (0, 1), got {self.confidence}")
        if not 0.0 < self.margin < 1.0:
            raise UsageError(f"margin must be in (0, 1), got {self.margin}")
        object.__setattr__(self, "repetitions", int(self.repetitions))
        object.__setattr__(self, "master_seed", int(self.master_seed))


@dataclass(frozen=True)
class CampaignResult:
    """Per-repetition outcomes plus the exact aggregate statistics."""

    plan: CampaignPlan
    sites: tuple
    correct_counts: tuple
    n_images: int
    baseline_correct: int
    site_population: int

    def __post_init__(self):
        if len(self.sites) != self.plan.repetitions or len(self.correct_counts) != self.plan.repetitions:
            raise UsageError("per-repetition lists must match plan.repetitions")

    @property
    def accuracies(self) -> tuple:
        return tuple(c / self.n_images for c in self.correct_counts)

    @property
    def baseline_accuracy(self) -> float:
        return self.baseline_correct / self.n_images

    @property
    def mean_faulty_accuracy(self) -> float:
        return float(Fraction(sum(self.correct_counts), self.plan.repetitions * self.n_images))

    @property
    def std_faulty_accuracy(self) -> float:
        """Population standard deviation of per-repetition accuracies (reported, not gated on)."""
        accs = np.asarray(self.accuracies, dtype=np.float64)
        return float(np.sqrt(np.mean((accs - accs.mean()) ** 2)))

    @property
    def vulnerability(self) -> float:
        """Accuracy fraction lost to faults: baseline minus mean faulty accuracy."""
        return self.baseline_accuracy - self.mean_faulty_accuracy

    @property
    def vulnerability_pct(self) -> float:
        return self.vulnerability * 100.0


def statistical_sample_size(population: int, confidence: float = DEFAULT_CONFIDENCE, margin: float = DEFAULT_MARGIN) -> int:
    """Number of injections for the given confidence/margin over `population` sites."""
    if not (isinstance(population, (int, np.integer)) and population >= 1):
        raise UsageError(f"population must be a positive integer, got {population!r}")
    if not 0.0 < confidence < 1.0:
        raise UsageError(f"confidence must be in (0, 1), got {confidence}")
    if not 0.0 < margin < 1.0:
        raise UsageError(f"margin must be in (0, 1), got {margin}")
    t = NormalDist().inv_cdf((1.0 + confidence) / 2.0)
    p = 0.5
    n = population / (1.0 + margin**2 * (population - 1) / (t * t * p * (1.0 - p)))
    return math.ceil(n)


def _site_decoder(model: NetworkModel):
    sizes = [int(np.prod(s)) for s in model.layer_shapes]
    bounds = np.cumsum(sizes)
    n_sites = int(bounds[-1]) * 8

    def decode(flat: int) -> FaultSite:
        elem, bit = divmod(int(flat), 8)
        layer = int(np.searchsorted(bounds, elem, side="right"))
        offset = 0 if layer == 0 else int(bounds[layer - 1])
        return FaultSite(layer, elem - offset, bit)

    return n_sites, decode


def sample_sites(model: NetworkModel, count: int, master_seed: int) -> list:
    """`count` sites drawn uniformly over the model's flat site space.

    Site i comes from its own counter-based stream (master_seed, i), so the
    list is independent of evaluation order and thread schedule.
    """
    if count < 1:
        raise UsageError(f"count must be >= 1, got {count}")
    if not 0 <= master_seed < _SEED_LIMIT:
        raise UsageError(f"master_seed must be a 64-bit unsigned integer, got {master_seed!r}")
    n_sites, decode = _site_decoder(model)
    # One bit generator, counter reset per index: bit-identical to constructing
    # Philox(key=master_seed, counter=i << 64) fresh for every i, without the
    # per-index construction cost.
    bitgen = np.random.Philox(key=master_seed)
    rng = np.random.Generator(bitgen)
    sites = []
    for i in range(count):
        state = bitgen.state
        state["state"]["counter"][:] = 0
        state["state"]["counter"][1] = i
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bitgen.state = state
        sites.append(decode(rng.integers(0, n_sites)))
    return sites


def run_campaign(
    model: NetworkModel,
    dataset: Dataset,
    cfg: ApproxConfig,
    plan: CampaignPlan,
    threads: int | None = None,
) -> CampaignResult:
    """One fault per repetition, persistent across the whole dataset pass."""
    evaluator = Evaluator(model, cfg)
    cache = evaluator.cache_activations(dataset)
    labels = dataset.labels
    baseline_correct = int(np.count_nonzero(np.argmax(cache[-1], axis=1) == labels))
    sites = sample_sites(model, plan.repetitions, plan.master_seed)

    def one(site: FaultSite) -> int:
        return int(np.count_nonzero(evaluator.predict_from_cache(cache, site) == labels))

    workers = threads if threads and threads > 0 else (os.cpu_count() or 1)
    if workers == 1:
        counts = [one(s) for s in sites]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(one, sites))
    return CampaignResult(
        plan=plan,
        sites=tuple(sites),
        correct_counts=tuple(counts),
        n_images=len(dataset),
        baseline_correct=baseline_correct,
        site_population=fault_site_count(model),
    )


def calibrate_repetitions(
    model: NetworkModel,
    dataset: Dataset,
    cfg: ApproxConfig,
    reference_plan: CampaignPlan,
    tolerance: float = 0.1,
    grid=CALIBRATION_GRID,
    threads: int | None = None,
) -> int:
    """Smallest grid repetition count matching the reference mean within `tolerance`.

    `tolerance` is in percentage points. The reference plan should carry the
    statistical_sample_size repetition count. Each trial campaign reseeds
    from (master_seed, R) so trials are not prefixes of the reference run;
    the whole search is deterministic. Falls back to the reference count when
    no grid value qualifies.
    """
    reference = run_campaign(model, dataset, cfg, reference_plan, threads=threads)
    ref_mean = reference.mean_faulty_accuracy
    for reps in sorted(int(r) for r in grid):
        if reps >= reference_plan.repetitions:
            break
        sub_seed = int(np.random.SeedSequence(entropy=reference_plan.master_seed, spawn_key=(reps,)).generate_state(1, np.uint64)[0])
        trial_plan = CampaignPlan(reps, sub_seed, reference_plan.confidence, reference_plan.margin)
        trial = run_campaign(model, dataset, cfg, trial_plan, threads=threads)
        if abs(trial.mean_faulty_accuracy - ref_mean) * 100.0 < tolerance:
            return reps
    return reference_plan.repetitions


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def campaign_report(result: CampaignResult) -> dict:
    """JSON-serializable report; numeric fields are plain floats/ints."""
    return {
        "format": "axdse-campaign-1",
        "plan": {
            "repetitions": result.plan.repetitions,
            "master_seed": result.plan.master_seed,
            "confidence": result.plan.confidence,
            "margin": result.plan.margin,
            "p": 0.5,
        },
        "site_population": result.site_population,
        "n_images": result.n_images,
        "baseline_correct": result.baseline_correct,
        "baseline_accuracy": result.baseline_accuracy,
        "mean_faulty_accuracy": result.mean_faulty_accuracy,
        "std_faulty_accuracy": result.std_faulty_accuracy,
        "vulnerability": result.vulnerability,
        "vulnerability_pct": result.vulnerability_pct,
        "repetitions": [
            {
                "repetition": i,
                "layer_index": site.layer_index,
                "element_index": site.element_index,
                "bit": site.bit,
                "correct": count,
                "accuracy": count / result.n_images,
            }
            for i, (site, count) in enumerate(zip(result.sites, result.correct_counts))
        ],
    }


def write_campaign_json(result: CampaignResult, path) -> Path:
    path = Path(path)
    _write_canonical_json(campaign_report(result), path)
    return path


def write_campaign_csv(result: CampaignResult, path) -> Path:
    path = Path(path)
    lines = ["repetition,layer_index,element_index,bit,correct,n_images,accuracy"]
    for i, (site, count) in enumerate(zip(result.sites, result.correct_counts)):
        acc = f"{count / result.n_images:.6f}"
        lines.append(f"{i},{site.layer_index},{site.element_index},{site.bit},{count},{result.n_images},{acc}")
    path.write_text("\n".join(lines) + "\n")
    return path
