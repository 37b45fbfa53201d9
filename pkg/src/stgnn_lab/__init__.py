"""Space-time graph filters and networks for decentralized control.

Subpackages cover graph shift operators and their perturbations, time grids
and warps, FIR space-time filters, layered networks with exact gradients,
operator-distance stability verification, the flocking and unlabeled
motion-planning control tasks, and a CLI experiment harness.
"""

__version__ = "0.1.0"
