"""Event-driven simulator and verification harness for a one-dimensional
infection front with mobile susceptible and infected random walkers."""

__version__ = "0.1.0"

from .config import (  # noqa: F401
    AlphaParams,
    Configuration,
    ModelParams,
    Variant,
    config_distance,
    phi_theta,
    sample_nu,
    sample_nu_c_plus,
)
from .front import (  # noqa: F401
    FrontTrace,
    ParticleSystem,
    build_front_modified,
    build_front_remanent,
    build_front_single_rate,
    red_blue_at,
    symmetrize,
    system_from_configuration,
)
from .renewal import (  # noqa: F401
    AttemptRecord,
    HorizonPolicy,
    RenewalRecord,
    find_separation_times,
    run_attempt_sequence,
)
from .walks import (  # noqa: F401
    ParticlePath,
    apply_time_change,
    mu_of,
    simulate_two_sided_walk,
)
