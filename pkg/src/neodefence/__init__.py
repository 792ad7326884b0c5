"""Blackbox detection, mitigation and reconstruction of localized backdoor
triggers in image classifiers."""

from .defence import (
    CalibrationResult,
    CleanReference,
    DefenceConfig,
    DefenceReport,
    ReconstructedTrigger,
    Verdict,
    choose_lambda,
    confirm_backdoor,
    defend,
    reconstruct_trigger,
    trigger_detect,
)
from .image_ops import (
    BlockerSpec,
    Position,
    TriggerPatch,
    bhattacharyya,
    dominant_colour,
    extract_region,
    histogram,
    load_png,
    paste_region,
    place_blocker,
    random_position,
    save_png,
)
from .metrics import attack_success_rate, confusion, jaccard, mitigation_report
from .oracle import CountingOracle, Oracle, SubprocessOracle, run_conformance_suite
from .simlab import (
    DatasetManifest,
    SimClassifier,
    SimOracle,
    TriggerPattern,
    gen_dataset,
    poison_dataset,
    poison_image,
    sim_classify,
)

__version__ = "0.1.0"
