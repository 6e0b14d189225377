"""delayfold: networks of coupled maps unfolded from a single delay system.

A scalar delay differential equation with modulated delayed feedbacks
emulates multilayer feed-forward and recurrent networks; this package
integrates the delay system, evaluates the unfolded networks directly,
converts between modulation step heights and weight matrices, and
verifies that the two views agree.
"""

from .activations import get_activation
from .dde import (
    History,
    HistoryRequiredError,
    NodeGrid,
    NumericalBlowupError,
    SemilinearParams,
    integrate_general,
    integrate_reference,
    integrate_semilinear,
    semilinear_rhs,
)
from .grid import NodeIndex, SourceCase, SourceRef, TimeGrid, delayed_source, node_time
from .modulation import (
    DelaySet,
    DriveSignal,
    ModulationProfile,
    UnrealizableWeightsError,
    assemble_weight_matrix,
    compile_profile,
    compile_weights,
    full_delay_set,
    legal_positions,
    modulation_at,
    topology_pattern,
    validate,
)
from .network import (
    NetworkSpec,
    PropagatorMatrices,
    forward_general,
    forward_map_limit,
    forward_recurrent,
    forward_semilinear,
    hidden_layer_matrix_form,
    input_layer,
    output_layer,
)
from .verify import (
    EquivalenceReport,
    Problem,
    SuiteReport,
    SweepReport,
    TopologyReport,
    check_dde_vs_network,
    convergence_base_problem,
    equivalence_suite,
    history_independence_check,
    map_limit_sweep,
    random_problem,
    theta_convergence_sweep,
    topology_check,
)

__version__ = "0.1.0"
