"""driftbench: shift detectors, detector ensembles and a seeded benchmark
harness for tabular data.

Reproducibility: all randomness flows through numpy's PCG64 generator seeded
via SeedSequence; per-task streams are split from master seeds with stable
string/integer keys (see driftbench.rng), so every operation is a pure
function of its inputs and seed.
"""

from . import benchmark, detectors, errors, forest, projections, shifts, stats, tabular
from .detectors import (
    ALL_DETECTORS,
    DetectionResult,
    DetectorContext,
    DetectorSpec,
    calibrate_significance_level,
    fit_context,
    run_detector,
)
from .forest import ForestConfig, RandomForestClassifier
from .shifts import ShiftOutcome, ShiftSpec, table1_shift_specs
from .tabular import (
    ColumnSchema,
    Dataset,
    EncodedMatrix,
    Preprocessor,
    SplitSpec,
    SyntheticSpec,
    load_csv,
    make_synthetic,
    preprocess,
    split,
    subsample,
)

__version__ = "0.1.0"
