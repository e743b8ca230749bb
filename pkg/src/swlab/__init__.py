"""Discrete sliced-Wasserstein energies: evaluation, cell structure, solvers and experiments."""

from .cells import (
    CellQuadratic,
    CellReport,
    Configuration,
    brute_force_configuration,
    brute_force_energy,
    configuration_of,
    eval_quadratic,
    fixed_point_residual,
    is_stable_cell,
    match_counts,
    minimize_quadratic,
    psi_estimate,
    quadratic_coeffs,
    required_p,
)
from .energy import (
    EnergyEstimate,
    closed_form_E_sym2d,
    closed_form_W2_sym2d,
    energy_mc,
    energy_p,
    grad_energy_mc,
    grad_energy_p,
    grad_w_theta,
    lipschitz_bound,
)
from .exact_ot import assignment_w2, kantorovich_exact, stability_gap, w2_over_d
from .exceptions import (
    DivergenceError,
    InstanceTooLargeError,
    NotInUError,
    ShapeError,
    SingularDirectionsError,
    SWLabError,
)
from .geometry import (
    DirectionSet,
    Support,
    is_in_U,
    project,
    rotate,
    sample_sphere,
    sort_permutation,
    w2_1d_uniform,
    w_theta,
)
from .solvers import BarycenterProblem, BCDConfig, SGDConfig, Trajectory, barycenter_run, bcd_run, sgd_run

__version__ = "0.1.0"
