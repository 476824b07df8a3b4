"""greenlight: desk-scale traffic-signal-control experimentation toolkit."""

__version__ = "0.1.0"

from .core import (ConfigurationError, DomainError, Intersection, Movement,
                   Phase, ScenarioEvent, SignalState, Vehicle, WorldState,
                   build_intersection, make_world, request_phase, step)
from .sensing import (ObservationWindow, SensorState, available_phases,
                      build_sensor_state, push)
from .policy import (PPOConfig, PolicyParams, RolloutBuffer, compute_gae,
                     init_params, load_checkpoint, save_checkpoint,
                     select_action, train)
from .refinement import BackendConfig, RefinementResult, refine, rule_backend
from .scenario import (ScenarioConfig, emv_scenario, regulation_scenario,
                       routine_scenario, training_scenario)
from .harness import (MetricsRecord, RunManifest, evaluate, export,
                      run_episode)
