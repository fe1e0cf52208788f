"""Noisy mirror-descent for private stochastic convex optimisation.

Modules:
- geometry:  feasible sets, potentials, projections, mirror step
- losses:    loss oracles, Lipschitz certificates, synthetic populations
- sampler:   index sampling, fresh-set bookkeeping, stopping-time simulation
- optimizer: the private SGD loop, regret / risk estimation, baseline
- privacy:   calibration, amplification, composition, end-to-end, audit
- harness:   experiment specs and the CLI commands
"""

__version__ = "0.1.0"
