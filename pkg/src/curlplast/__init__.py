"""Rate-independent gradient plasticity with plastic spin on structured grids.

The plastic distortion is a trace-free, generally non-symmetric nodal tensor
field; its row-wise curl carries a quadratic defect energy, a symmetric
local backstress provides kinematic hardening, and each load step solves an
incremental variational inequality by alternating conjugate-gradient and
proximal-gradient block minimizations.
"""

__version__ = "0.1.0"

from .grid import (
    BoundaryConfig,
    Grid,
    ScalarField,
    SingularBlock,
    TensorField,
    VectorField,
    apply_micro_hard_mask,
    assemble_block,
    discrete_curl,
    shape_gradients,
)
from .korn import KornProblem, ZeroField, estimate_min_quotient, korn_quotient
from .models import (
    ModelVariant,
    SimState,
    cauchy_stress,
    eshelby_stress,
    incremental_dissipation,
    total_energy,
    yield_value,
)
from .oracles import (
    MicroStress,
    Poly3,
    PolyTensorField,
    microstress_identity_check,
    radial_return_0d,
    symbolic_curl,
)
from .scenario import ParseError, Scenario, ValidationError, canonical_text, parse_scenario
from .solver import (
    DiscreteProblem,
    InfeasibleBC,
    LoadStep,
    NoConvergence,
    SolverConfig,
    StepReport,
    prox_dissipation,
    time_step,
)
from .tensors import MaterialParams, NonSkewInput, axl, curl_from_gradient, decompose, elasticity_apply

__all__ = [name for name in dir() if not name.startswith("_")]
