"""Locality of density matrices in tight-binding models.

Modules
-------
lattice         periodic supercells, displacements and strain norms
tightbinding    model definitions and Hamiltonian assembly
bloch           Bloch matrices, band structures and band gaps
densitymatrix   spectral and contour density matrices and their derivatives
locality        decay profiles, rate fits and the locality experiments
cli, config     command-line experiment runner
"""

__version__ = "0.1.0"
