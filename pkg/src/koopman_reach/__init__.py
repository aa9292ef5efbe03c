"""koopman-reach: safety verification of nonlinear ODEs via Koopman linearization.

The pipeline: sample trajectories from a (possibly black-box) system, fit a
finite Koopman operator over an observable dictionary by extended DMD, then
prove or refute discrete-time safety of the lifted linear system whose
initial set is defined by nonlinear observable constraints.
"""

__version__ = "0.1.0"
