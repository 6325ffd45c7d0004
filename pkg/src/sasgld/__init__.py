"""SGLD with Sundman time-rescaled adaptive stepsizes (SA-SGLD)."""
from .controller import ControllerState, monitor_value, next_timestep, psi, update_monitor
from .core import (ChainRecord, ChainResult, ConfigError, ControllerConfig, EnsembleMember,
                   NonFiniteError, SamplerConfig, new_rng, parameter_vector, validate_config)
from .oracles import (ExactOracle, GradientEstimate, MinibatchOracle, NoisyOracle,
                      PosteriorTarget, exact_gradient, minibatch_gradient, noisy_gradient)
from .potentials import (Potential, finite_diff_check, grid_boltzmann_density, make_potential,
                         potential_grad, potential_value)
from .samplers import run_chain, sasgld_step, sgld_step

__version__ = "0.1.0"
