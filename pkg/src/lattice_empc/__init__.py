"""Lattice piecewise-affine approximation of explicit linear MPC."""
from .condense import MpcProblem, MpQp, condense, first_input, prediction_matrices
from .config import RunConfig, example1_problem, satellite_problem
from .errors import *  # noqa: F401,F403
from .explicit_law import (AffinePiece, CriticalRegion, collect_pieces, dedupe_pieces,
                           local_affine_law, sample_states)
from .lattice import (LatticeBundle, LatticePwa, build_bundle, build_lattice,
                      estimate_error_bound, eval_bundle, eval_lattice, simplify)
from .linalg_qp import QpOptions, QpSolution, QpStatus, lqr_gain, solve_dare, solve_qp
from .satellite import (AttitudeState, SatelliteParams, dynamics, integrate_rk4, linear_model,
                        linearize)
from .simulation import (LatticeController, LqrController, OnlineMpc, SimResult,
                         compare_controllers, control_step, run_closed_loop)
