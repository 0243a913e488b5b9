"""touchdoor: a simulated tactile-gripper door-opening workbench.

Modules
-------
nn         dense network kernel (MLP forward/backward, Adam, Polyak, checkpoints)
tactile    tactile array model: binarization, flips, scan circuit, calibration
env        kinematic arm + dynamic hinged door with penalty contacts
reward     shaped reward with door/distance/orientation/grasp/tactile terms
randomize  domain randomization of dynamics, observations and actions
td3        twin-critic delayed-update learner and training loop
harness    run configs, CLI entry points, evaluation domains, reports
"""

__version__ = "0.1.0"

from .errors import CalibrationError, ConfigError, ContractError, TrainingDiverged

__all__ = [
    "CalibrationError",
    "ConfigError",
    "ContractError",
    "TrainingDiverged",
    "__version__",
]
