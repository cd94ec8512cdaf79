"""Deep-equilibrium landmark detection at desk scale: fixed-point solvers,
implicit differentiation, a toy heatmap model, warm-started video inference
(recurrence without recurrence) and temporal-coherence metrics."""

__version__ = "0.1.0"
