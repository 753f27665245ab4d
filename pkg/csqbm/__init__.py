# 连续半量子玻尔兹曼机 (CSQBM)
# 纯 numpy/scipy 实现：稠密 Pauli 哈密顿量、Gibbs 态、自由能 Q-learning

__version__ = "0.1.0"

from .quantum_core import (
    GibbsState,
    GibbsStateError,
    NotHermitianError,
    PauliHamiltonianSpec,
    PauliOp,
    PauliTerm,
    assemble_hamiltonian,
    embed_operator,
    expectation,
    gibbs_state,
    measurement_distribution,
    pauli_matrix,
    sample_hidden,
)
from .exp_family import (
    ExpFamilyPrior,
    NaturalParams,
    NonNormalizableError,
    c_value,
    grad_c_theta,
    grad_c_v,
    log_density,
    log_partition,
    sample,
    tilt,
)
from .model import (
    CsqbmModel,
    FreeEnergyReport,
    GradientReport,
    ModelValidationError,
    assemble_h_prime,
    conditional_hidden,
    conditional_visible_params,
    free_energy,
    gibbs_sample_action,
    grad_free_energy,
    q_value,
)
from .discrete import DiscreteSqbmModel, discrete_free_energy, discrete_grad_free_energy
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .envs import ContinuousBandit, EnvSpec, EpisodeDoneError, StepResult, SteerLine, bandit_env, steering_env
from .agent import (
    AgentConfig,
    DivergenceError,
    ReplayBuffer,
    TdUpdateError,
    Transition,
    evaluate,
    explore_action,
    select_action,
    td_update,
    train,
)

__all__ = [
    "AgentConfig",
    "CheckpointError",
    "ContinuousBandit",
    "CsqbmModel",
    "DiscreteSqbmModel",
    "DivergenceError",
    "EnvSpec",
    "EpisodeDoneError",
    "ExpFamilyPrior",
    "FreeEnergyReport",
    "GibbsState",
    "GibbsStateError",
    "GradientReport",
    "ModelValidationError",
    "NaturalParams",
    "NonNormalizableError",
    "NotHermitianError",
    "PauliHamiltonianSpec",
    "PauliOp",
    "PauliTerm",
    "ReplayBuffer",
    "SteerLine",
    "StepResult",
    "TdUpdateError",
    "Transition",
    "assemble_h_prime",
    "assemble_hamiltonian",
    "bandit_env",
    "c_value",
    "conditional_hidden",
    "conditional_visible_params",
    "discrete_free_energy",
    "discrete_grad_free_energy",
    "embed_operator",
    "evaluate",
    "expectation",
    "explore_action",
    "free_energy",
    "gibbs_sample_action",
    "gibbs_state",
    "grad_c_theta",
    "grad_c_v",
    "grad_free_energy",
    "load_checkpoint",
    "log_density",
    "log_partition",
    "measurement_distribution",
    "pauli_matrix",
    "q_value",
    "sample",
    "sample_hidden",
    "save_checkpoint",
    "select_action",
    "steering_env",
    "td_update",
    "tilt",
    "train",
    "__version__",
]
