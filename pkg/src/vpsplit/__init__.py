"""Structure-preserving particle methods for Vlasov-Poisson in a strong magnetic field."""

__version__ = "0.1.0"

from .rotation import apply_rotation, hat, rot_exp, rot_exp_integral, rotation_pair
from .fields import FieldModel, line_integral_B, strong_field, uniform_field
from .ensemble import Box3, Ensemble, PhaseGridSpec, init_grid, moments, weak_pair
from .pusher import (ParticleState, ScaledClock, integrate, reference_solve, step_hsbx,
                     step_rk2, step_scpd)
from .mollify import (KernelEval, ShapeSpec, coulomb_kernel, field_direct, mollification_error,
                      mollified_kernel, scaled_shape, shape_value)
from .fieldsolve import MeshSpec, NodalField, deposit, eval_field, solve_poisson
from .diagnostics import (ErrorRecord, discrete_hamiltonian, max_error, order_table,
                          parallel_error)
from .pic import PicConfig, run_pic

__all__ = [
    "apply_rotation", "hat", "rot_exp", "rot_exp_integral", "rotation_pair",
    "FieldModel", "line_integral_B", "strong_field", "uniform_field",
    "Box3", "Ensemble", "PhaseGridSpec", "init_grid", "moments", "weak_pair",
    "ParticleState", "ScaledClock", "integrate", "reference_solve", "step_hsbx", "step_rk2",
    "step_scpd",
    "KernelEval", "ShapeSpec", "coulomb_kernel", "field_direct", "mollification_error",
    "mollified_kernel", "scaled_shape", "shape_value",
    "MeshSpec", "NodalField", "deposit", "eval_field", "solve_poisson",
    "ErrorRecord", "discrete_hamiltonian", "max_error", "order_table", "parallel_error",
    "PicConfig", "run_pic",
]
