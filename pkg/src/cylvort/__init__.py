"""cylvort: gauged vortex flows on the cylinder.

Loop-space gradient flows with their Fourier reduction, a singular
Kazdan-Warner solver with field reconstruction, and the constrained
Morse homotopy toolbox, plus a scenario-runner CLI.
"""

from .loops import (
    DEFAULT_N_T,
    CriticalLoop,
    CylinderField,
    LieValue,
    LoopConfig,
    dominant_winding,
)
from .functionals import (
    action,
    action_gradient,
    coulomb_project,
    critical_action,
    energy,
    floer_action,
    gauge_transform,
    mean_moment,
    moment_map,
    t2_rotate,
)
from .flow import (
    FlowTrajectory,
    FlowVariant,
    FourierWindow,
    check_mode_confinement,
    integrate,
    max_principle_check,
    mode_ode_step,
    rhs,
    xi_v_solve,
)
from .kw import (
    KWGrid,
    KWProblem,
    ScalarFieldW,
    VortexSet,
    singular_background,
    solve_kw,
    uniqueness_probe,
    verify_kw,
)
from .moduli import J_map, T_map, flow_residual, reconstruct
from .lagrange import (
    ConstrainedSystem,
    Homotopy,
    HomotopyParams,
    LagrangeState,
    build_homotopy,
    build_tubular,
    hessian_index,
    hopf_example,
    integrate_flow_line,
    lagrange_grad,
    moduli_count_hopf,
    normal_form_flow,
    palais_smale_probe,
)

__version__ = "0.1.0"
