"""samlab: a desk-scale laboratory for sharpness-aware optimization.

Subpackages cover reverse-mode differentiation with exact Hessian-vector and
third-order directional products (engine, oracle), small MLPs and
deterministic data pipelines (models, data), the SAM optimizer family
(optim), spectral probes (hessian), continuous-time drift/diffusion models
and moment probes (sde), closed-form bounds (bounds), and a config-driven
experiment runner with a CLI (runner, cli).
"""

__version__ = "0.1.0"
