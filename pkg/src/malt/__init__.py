"""Mesoscopic almost-linearity targeting (MALT) for adversarial attacks on small dense models."""

from .attacks import (
    AttackConfig,
    AttackOutcome,
    BudgetReport,
    budget_model,
    fgsm_targeted,
    malt_attack,
    naive_attack,
    pgd_targeted,
    run_attacks,
)
from .data import Dataset, SubspaceDatasetSpec, TrainConfig, gen_subspace_dataset, load_csv, load_idx, train
from .errors import ConfigError, FormatError, MaltError, NumericalAbort
from .linalg import SeededRng, SubspaceBasis, norm, project_complement, sample_gaussian, sample_sign
from .models import (
    LinearModel,
    MlpModel,
    PassCounter,
    ReluActivation,
    SmoothLeakyActivation,
    TwoLayerNet,
    forward,
    grad_class,
    jacobian,
    load_model,
    save_model,
)
from .probe import DirectionSpec, TheoryConfig, linearity_stats, linearity_trace, theory_suite, theory_trial
from .targeting import TargetPlan, linear_min_perturbation, malt_scores, malt_targets, naive_targets

__version__ = "0.1.0"
