"""Causal mediation analysis with a longitudinal mediator and a
restricted-mean event-free time outcome.

The package models a mediator trajectory with a linear mixed model on
natural cubic splines, links it to a proportional-hazards outcome
through a trajectory functional, and decomposes the total treatment
effect into direct and indirect parts in the presence of an ordinal
treatment-dependent confounder. Because the counterfactual confounder
pair is only partially identified, the decomposition is indexed by a
sensitivity parameter; bounds, feasibility diagnostics, a structural
simulation oracle, and a Bayesian fitting routine are included.
"""

from .core import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
