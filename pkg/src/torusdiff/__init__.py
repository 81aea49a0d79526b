"""Simulation and verification lab for two-species cross-diffusion on a periodic grid.

The package has three layers:

* deterministic numerics: periodic grids and dual norms (``grid``),
  piecewise-linear embedding into function space (``interp``), reaction and
  diffusion rate models (``model``), and the coupled ODE system obtained by
  discretizing space (``semidiscrete``);
* the stochastic side: an event-driven birth/death/walk particle system whose
  density should track the ODE system (``particle``), with a compiled engine
  when available and a pure-Python twin otherwise;
* empirical statistics over replica ensembles (``analytics``) and experiment
  orchestration plus a command line front end (``harness``, ``cli``).
"""

__version__ = "0.1.0"

from . import analytics, grid, harness, interp, model, particle, semidiscrete

__all__ = [
    "analytics",
    "grid",
    "harness",
    "interp",
    "model",
    "particle",
    "semidiscrete",
    "__version__",
]
