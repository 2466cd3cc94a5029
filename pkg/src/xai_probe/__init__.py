"""Benchmark toolkit: localized adversarial attacks with known ground
truth, three explainers, and overlap-based scoring of how well each
explanation recovers the attacked region."""

from .attack import (
    AdversarialRecord,
    AttackConfig,
    AttackStatus,
    bim_attack,
    generate_examples,
)
from .config import default_config, load_config
from .data import DatasetConfig, generate_dataset, train
from .errors import (
    ConfigError,
    InputError,
    InternalError,
    NumericError,
    TrainingError,
    XaiProbeError,
)
from .evaluation import (
    ExplanationSet,
    SummaryTable,
    aggregate,
    evaluate_example,
    hamming_likeness,
    jaccard,
)
from .explainers import (
    LimeConfig,
    SuperpixelRanking,
    guided_backprop,
    lime_explain,
    partial_union,
    pixel_budget_mask,
    salience,
)
from .net import (
    BackwardMode,
    Network,
    build_network,
    clone_network,
    forward,
    load_network,
    loss_and_grad,
    save_network,
    sgd_step,
)
from .segmentation import SegmentMap, largest_regions, segment

__version__ = "0.1.0"
