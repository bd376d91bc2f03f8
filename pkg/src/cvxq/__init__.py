"""Convex-programming approach to Q-learning for deterministic control.

The package is organized around the pipeline: environments generate
trajectories (`envs`, `sampling`), feature maps turn state-action pairs into
basis vectors (`features`), the training programs are assembled as explicit
convex programs (`program`) and solved through a thin backend layer
(`solver`), LP duality supplies certificates and audits (`duality`), a
temporal-difference recursion provides the contrast baseline (`baseline`),
and the experiment harness ties it together (`harness`).
"""

from . import baseline, duality, envs, features, harness, oracles, program, sampling, solver

__version__ = "0.1.0"

__all__ = [
    "baseline",
    "duality",
    "envs",
    "features",
    "harness",
    "oracles",
    "program",
    "sampling",
    "solver",
    "__version__",
]
