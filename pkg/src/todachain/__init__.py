"""Toda chains with on-site pinning: transport, rings and Poincare sections."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    BlowUpError,
    Boundary,
    ChainSpec,
    State,
    center_of_mass_invariant,
    forces,
    local_current,
    local_currents,
    total_current,
    total_energy,
)
from .integrator import (  # noqa: E402
    BathSpec,
    RngStream,
    Scheme,
    StepperConfig,
    deterministic_step,
    evolve,
    langevin_step,
)
from .ness import (  # noqa: E402
    NessConfig,
    NessResult,
    estimator_agreement,
    pinning_sweep,
    run_ness,
    scaling_exponent,
)
from .ring import RingConfig, RingSeries, dominant_frequency, envelope, run_ring  # noqa: E402
from .poincare import (  # noqa: E402
    Detection,
    SectionConfig,
    SectionEvents,
    auto_slice,
    box_count_dimension,
    run_sections,
    slice_events,
)
from .config import ConfigError, ExperimentConfig, parse_config  # noqa: E402
