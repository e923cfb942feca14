"""Switched-model simulation of an LCC-S wireless power converter and
reinforcement-learning (TD3 / DDPG) tuning of its PI frequency controller.

Modules
-------
converter   parameters, the six affine subsystems, mode logic, passivity screen
simulator   RK4 integration, switching drivers, scenarios, metrics, frequency sweep
controller  frequency-mode PI regulator with clamping anti-windup
neural      small dense networks, backprop, Adam, deterministic checkpoints
agent       tuning environment, replay buffer, TD3/DDPG learner, training loop
config      configuration files with unit suffixes and bundled presets
cli         the ``lccs-tuner`` command
"""

from .agent import INITIAL_GAINS, PUBLISHED_GAINS, Td3Config, TuningEnv, train
from .controller import PIController, pi_step
from .converter import ConverterParams, build_subsystems, derive_params, passivity_screen
from .simulator import (ClosedLoop, FrequencyDriver, Scenario, fig9_scenario, frequency_sweep,
                        run)

__version__ = "0.1.0"

__all__ = ["ClosedLoop", "ConverterParams", "FrequencyDriver", "INITIAL_GAINS", "PIController",
           "PUBLISHED_GAINS", "Scenario", "Td3Config", "TuningEnv", "build_subsystems",
           "derive_params", "fig9_scenario", "frequency_sweep", "passivity_screen", "pi_step",
           "run", "train"]
