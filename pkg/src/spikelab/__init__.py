"""Numerical laboratory for 2D attractive Bose-Einstein ground states.

Computes the radial ground profile of the cubic scalar field equation, the
critical interaction strength, trap analyses, the correction fields of the
spike expansion, the expansion constants, direct constrained minimizers of the
Gross-Pitaevskii energy, and the cross-validation studies between the two.
"""

__version__ = "0.1.0"
