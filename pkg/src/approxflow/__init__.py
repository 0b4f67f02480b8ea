"""Approximate keyed aggregation over sampled partitioned data with error bounds."""

from .asrs import (
    ReservoirState,
    StratifiedReservoirSampler,
    admit,
    allocate,
    asrs_transform,
    stratified_estimate,
)
from .dataset import PartitionedDataset, SamplingConfig, from_records, load_text
from .estimator import (
    ConfidenceSpec,
    KeyEstimate,
    SampleNode,
    compute_tree,
    estimate_population,
    multistage_sum,
    multistage_variance,
    two_stage_sum,
    two_stage_variance,
)
from .exceptions import (
    ApproxFlowError,
    ChainTypeError,
    EmptyInputError,
    InfeasibleTargetsError,
    PipelineError,
)
from .pipeline import (
    AggregationResult,
    Filter,
    FlatMap,
    Map,
    MapValues,
    MultiStageAggregator,
    Sample,
    TransformChain,
    builtin_pipeline,
    execute,
    execute_exact,
)
from .provenance import ProvenanceTree, render_tree
from .tuner import (
    ErrorTargets,
    RateSearchConfig,
    RateTuner,
    predict_error_cdf,
    run_pilot,
    run_with_targets,
    search_rates,
)

__version__ = "0.1.0"
