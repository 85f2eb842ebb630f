"""First eigenvalue of the regional fractional p-Laplacian with an exterior
Dirichlet set, and optimization of that set under a measure constraint.

Modules: geometry (domains, meshes, masks), kernel (singular-kernel
quadrature and energies), eigensolve (first eigenpair, bounds, local
references), shapeopt (mask optimization and experiments), asympt
(ladders in s) and cli (configuration-driven runs).
"""

__version__ = "0.1.0"
