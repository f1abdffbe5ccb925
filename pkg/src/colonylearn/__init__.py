"""Colony-guided opposite-label training.

Classes are partitioned into named colonies by an external prior; training
pairs the usual cross-entropy with an opposite term on a label sampled
uniformly from outside the true label's colony. The package bundles the
taxonomy machinery, the samplers, the composite loss with exact gradients,
a desk-scale numpy MLP trainer, dataset loaders with a within-colony noise
injector, brute-force probability/risk checks, and the experiment harness.
"""

from .datasets import (
    Dataset,
    NoiseManifest,
    inject_colony_noise,
    load_cifar,
    load_idx,
    standardize_features,
    synth_blobs,
)
from .harness import (
    ExperimentConfig,
    RunRecord,
    compare_scenarios,
    emit_curves,
    run_experiment,
)
from .losses import (
    CompositeLossConfig,
    LossBreakdown,
    composite_grad_logits,
    composite_loss,
    opposite_loss,
    positive_loss,
    softmax,
)
from .network import (
    MlpModel,
    Prediction,
    SolverConfig,
    TrainingDivergedError,
    backward,
    evaluate,
    forward,
    init_mlp,
    load_model,
    save_model,
    train,
)
from .sampler import (
    OppositeLabel,
    SeededRng,
    resample_per_iteration,
    sample_opposite_rt,
    sample_opposite_sd,
)
from .taxonomy import (
    Colony,
    SemanticPrior,
    builtin_prior,
    load_prior,
)
from .theory import (
    DiscreteInstance,
    TransitionMatrix,
    build_transition,
    induced_opposite,
    monte_carlo_consistency,
    verify_minimizer_agreement,
)

__version__ = "0.1.0"
