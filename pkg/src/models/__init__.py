from .schedule_spec import ScheduleKind, ScheduleSpec
from .update_config import UpdateConfig
from .pattern_store import PatternStore
from .context_set import ContextSet
from .layer_weights import LayerStack, LayerWeights, Mixer
from .energy_trace import EnergyRecord, EnergyTrace, TraceComparison, compare_traces
from .noise_schedule import NoiseSchedule
from .toy_sample import ToySample
from .run_config import RunConfig

__all__ = [
    "ScheduleKind", "ScheduleSpec", "UpdateConfig", "PatternStore", "ContextSet",
    "LayerStack", "LayerWeights", "Mixer", "EnergyRecord", "EnergyTrace",
    "TraceComparison", "compare_traces", "NoiseSchedule", "ToySample", "RunConfig",
]
