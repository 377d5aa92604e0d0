"""Monte Carlo sampling of distributions on constraint stratifications.

A stratification is a union of manifolds of different dimensions, each cut
out by tagging scalar functions as equalities or inequalities; the chain
moves within a manifold and jumps between neighbouring ones by adding or
removing one constraint at a time.
"""

from .analysis import (
    WeightedEstimate,
    binned_error,
    bond_count_probabilities,
    cluster_yields,
    manifold_fraction_errors,
    manifold_fractions,
    reweight,
    reweight_series,
    volume_estimate,
)
from .backend import compiled_available
from .constraints import (
    EQ,
    FIX,
    IN,
    NONE,
    VARY,
    CallableConstraintSystem,
    ChainState,
    ConstraintSystem,
    DegenerateConfigurationError,
    DiagonalQuadratic,
    PairDistance2,
    StratificationSpec,
    StructuredConstraintSystem,
    check_gradients,
    label_string,
    manifold_dims,
)
from .models import BUILTIN_MODELS, Model, make_model
from .projection import NewtonSettings, ProjectionResult, nes, nes_l
from .proposals import SamplerParams, recommended_lambda_gain
from .sampler import (
    StepOutcome,
    acceptance_probability,
    iterate_chain,
    run_chain,
    run_chains,
    sample_strat_step,
)
from .traces import ChainTrace

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
