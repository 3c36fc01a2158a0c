"""Forward simulation and Tikhonov-regularised reconstruction of cell
mutation laws in two-population tumour invasion models (local haptotaxis and
nonlocal adhesion variants)."""

__version__ = "0.1.0"
