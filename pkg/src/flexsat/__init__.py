"""Flexible space telescope micro-vibration and line-of-sight control workbench."""

__version__ = "0.1.0"

from .linsys import (  # noqa: F401
    FrequencyResponse,
    SignalTrace,
    StateSpace,
    freq_response,
    h2_norm,
    hinf_norm,
    interconnect,
    is_stable,
    lft_lower,
    sigma_bounds,
    simulate,
)
from .loscontrol import (  # noqa: F401
    ChannelSpec,
    ControllerDesign,
    LosKinematics,
    WeightSet,
    build_generalized_plant,
    evaluate_worstcase,
    fsm_channels,
    fsm_control_law,
    generalized_family,
    kalman_los_observer,
    los_closed_loop,
    pma_channels,
    pma_control_law,
    tune_structured,
)
from .spacecraft import (  # noqa: F401
    NoiseSpec,
    ParameterPoint,
    ParametricPlant,
    assemble_benchmark,
    default_config,
    sample_grid,
    transmissibility,
)
