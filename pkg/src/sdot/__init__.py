"""Semi-discrete quadratic transport on 3d triangle soups.

The source measure is a piecewise-affine density on an arbitrary triangle
soup; the target is a finite weighted point set.  The solver finds power
weights whose restricted cells carry prescribed masses, by a damped Newton
iteration with guaranteed residual decrease.  On top of the solver sit
blue-noise-style quantization, dual remeshing, and rigid registration.
"""

from .apps import (DualMesh, QuantizeResult, RegisterResult, RemeshResult,
                   RigidTransform, quantize, register, remesh)
from .errors import (DegenerateConfigurationError, GeometryError,
                     InitializationError, LineSearchError,
                     NonConvergenceError, ParseError, RegistrationError,
                     SdotError, SingularSystemError, SolverError,
                     ValidationError)
from .geometry import (AffineDensity, ConvexPolygon3, HalfspaceConstraint,
                       MESH_EDGE, clip_polygon, integrate_affine_area,
                       integrate_affine_edge, integrate_quadratic_cost,
                       point_triangle_distance, tangent_projection)
from .io import (RunReport, export_cells, load_density, load_mesh,
                 load_points, write_obj, write_run_report, write_weights,
                 write_xyz)
from .laguerre import (InterfaceRecord, RestrictedLaguerreDiagram,
                       bisector_constraint, cell_centroids, compute_diagram,
                       interface_jacobian_entries)
from .measures import (ConnectivityReport, SimplexSoup, SiteSet,
                       check_strong_connectedness, distance_to_soup,
                       normalize, sample_on_soup, total_mass)
from .solver import (SolutionCertificate, SolveReport, SolverConfig,
                     SparseJacobian, assemble_jacobian, damped_newton,
                     evaluate_G, init_weights, solve_newton_system,
                     verify_solution)
from .transport import (TransportSummary, lp_oracle, transport_cost,
                        transport_map_eval)

__version__ = "0.1.0"

__all__ = [
    "AffineDensity", "ConnectivityReport", "ConvexPolygon3",
    "DegenerateConfigurationError", "DualMesh", "GeometryError",
    "HalfspaceConstraint", "InitializationError", "InterfaceRecord",
    "LineSearchError", "MESH_EDGE", "NonConvergenceError", "ParseError",
    "QuantizeResult", "RegisterResult", "RegistrationError", "RemeshResult",
    "RestrictedLaguerreDiagram", "RigidTransform", "RunReport", "SdotError",
    "SimplexSoup", "SingularSystemError", "SiteSet", "SolutionCertificate",
    "SolveReport", "SolverConfig", "SolverError", "SparseJacobian",
    "TransportSummary", "ValidationError", "assemble_jacobian",
    "bisector_constraint", "cell_centroids", "check_strong_connectedness",
    "clip_polygon", "compute_diagram", "damped_newton", "distance_to_soup",
    "evaluate_G", "export_cells", "init_weights", "integrate_affine_area",
    "integrate_affine_edge", "integrate_quadratic_cost",
    "interface_jacobian_entries", "lp_oracle", "load_density", "load_mesh",
    "load_points", "normalize", "point_triangle_distance", "quantize",
    "register", "remesh", "sample_on_soup", "solve_newton_system",
    "total_mass", "transport_cost", "transport_map_eval",
    "verify_solution", "write_obj", "write_run_report", "write_weights",
    "write_xyz",
]
