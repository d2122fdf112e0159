from .metrics import (
    FEATURE_DIM,
    FeatureStats,
    RandomVideoFeaturizer,
    class_shuffled,
    feature_stats,
    featurize,
    frechet_distance,
    frechet_sanity,
    temporal_consistency,
)
from .report import dump_clip, format_report, read_ppm, read_report, write_ppm, write_report
from .run import eval_run, generate, select_conditioning
from .verify import SUITES, Check, run_suites
