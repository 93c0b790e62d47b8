"""Dynamics, the velocity operator and the convergence schedule."""
from .dynamics import (EvolvedState, Evolver, MomentSeries, MomentValue, evolve,
                       heisenberg_position, moment, transport_exponents)
