"""Queue-length analysis for a single-server queue with one-dependent vacations
and its use as an approximation in a two-machine, one-repairman layered model.

Modules:
    distkit      distributions with Laplace-Stieltjes transforms and moment fits
    depcore      dependence pairs (chi, g) and the stationary downtime transform
    vacq         queue-length PGF with one-dependent vacations (exact when independent)
    repairlayer  machine-layer downtime statistics, moment matching, approximation
    qbd          exact matrix-geometric reference for exponential service
    desim        discrete-event simulation of both models
    expcli       experiment runner and command line
"""

from .depcore import DependencePair, DowntimeStats, from_derivatives, phase_compound_pair
from .distkit import Deterministic, ErlangMixture, Exponential, Hyper2, fit_two_moment
from .repairlayer import LayeredSpec, MachineSpec, approximate_queue, downtime_stats, independent_baseline
from .vacq import UnstableError, VacQueueSpec, mean_L, pgf_L, pmf_L

__version__ = "0.1.0"
