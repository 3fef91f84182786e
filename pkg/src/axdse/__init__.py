"""Design-space exploration for 8-bit quantized networks on approximate multipliers.

The pipeline: quantize a float network, pick per-layer multipliers, measure
fault-free accuracy and transient-fault vulnerability under statistical
bit-flip injection, attach analytical cost proxies, and extract the Pareto
frontier over the resulting design points.
"""

__version__ = "0.1.0"

from .dse import (
    CostProxies,
    DesignPoint,
    cost_proxies,
    enumerate_configs,
    evaluate_point,
    pareto_frontier,
    run_dse,
    sample_configs,
)
from .engine import ApproxConfig, Evaluator, FaultSite, evaluate_accuracy, forward
from .errors import AxdseError, ManifestError, UsageError, ValidationError
from .faultsim import (
    CampaignPlan,
    CampaignResult,
    calibrate_repetitions,
    run_campaign,
    sample_sites,
    statistical_sample_size,
)
from .model import (
    Conv2D,
    Dataset,
    Dense,
    Flatten,
    MaxPool2D,
    NetworkModel,
    QuantParams,
    ReLU,
    Tensor,
    fault_site_count,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    total_mult_count,
)
from .multipliers import (
    ExactMultiplier,
    LutMultiplier,
    MultiplierModel,
    MultiplierProfile,
    TruncatedMultiplier,
    builtin_multiplier,
    characterize,
    load_lut,
    resolve_multiplier,
    save_lut,
)
from .quantize import (
    FloatDataset,
    FloatModel,
    float_accuracy,
    float_forward,
    load_float_dataset,
    load_float_model,
    quantize_dataset,
    quantize_model,
    save_float_dataset,
    save_float_model,
)

__all__ = [
    "__version__",
    "AxdseError",
    "UsageError",
    "ValidationError",
    "ManifestError",
    "QuantParams",
    "Tensor",
    "Dense",
    "Conv2D",
    "MaxPool2D",
    "Flatten",
    "ReLU",
    "NetworkModel",
    "Dataset",
    "load_model",
    "save_model",
    "load_dataset",
    "save_dataset",
    "fault_site_count",
    "total_mult_count",
    "FloatModel",
    "FloatDataset",
    "float_forward",
    "float_accuracy",
    "load_float_model",
    "save_float_model",
    "load_float_dataset",
    "save_float_dataset",
    "quantize_model",
    "quantize_dataset",
    "MultiplierModel",
    "ExactMultiplier",
    "TruncatedMultiplier",
    "LutMultiplier",
    "MultiplierProfile",
    "characterize",
    "load_lut",
    "save_lut",
    "builtin_multiplier",
    "resolve_multiplier",
    "ApproxConfig",
    "FaultSite",
    "Evaluator",
    "forward",
    "evaluate_accuracy",
    "CampaignPlan",
    "CampaignResult",
    "statistical_sample_size",
    "sample_sites",
    "run_campaign",
    "calibrate_repetitions",
    "CostProxies",
    "DesignPoint",
    "cost_proxies",
    "enumerate_configs",
    "sample_configs",
    "evaluate_point",
    "run_dse",
    "pareto_frontier",
]
