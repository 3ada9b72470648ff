"""gdec: context-grounded decoding engine and evaluation harness.

Decoders that re-weight a model's next-token scores against its
context-free prior, dependency measures between the two distributions,
hallucination metrics for caption corpora, preference-pair tooling, and a
synthetic fading-memory model that serves as a verification oracle.
"""

from .bridge_client import BridgeSession, open_bridge_session
from .decoding import (
    DECODER_KINDS,
    DecoderConfig,
    GenerationTrace,
    StepRecord,
    adjust_scores,
    contrastive_adjust,
    decode,
    m3id_adjust,
    m3id_gate,
    pmi_adjust,
    select_greedy,
    select_multinomial,
    shannon_entropy,
)
from .frames import LogitFrame, ModelSession, SessionDescriptor
from .metrics import (
    AnnotationSet,
    CaptionRecord,
    ChairReport,
    ComparisonTable,
    Lexicon,
    PopeAnswer,
    PopeReport,
    chair,
    compare_runs,
    extract_objects,
    pope_score,
)
from .mock import MockScenario, MockSession, open_mock_session
from .pdm import (
    DecayFit,
    PdmSeries,
    aggregate_traces,
    distance,
    estimate_decay_rate,
    pdm_h,
    pdm_r,
    trace_series,
)
from .preference import (
    BuildResult,
    DpoGradients,
    DpoInputs,
    PreferencePair,
    bt_preference,
    build_pairs,
    dpo_loss,
)
from .simulator import ExperimentReport, SimSpec, frame_at, grounded_set, run_experiment
from .traces import read_trace, write_trace

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AnnotationSet",
    "BridgeSession",
    "BuildResult",
    "CaptionRecord",
    "ChairReport",
    "ComparisonTable",
    "DECODER_KINDS",
    "DecayFit",
    "DecoderConfig",
    "DpoGradients",
    "DpoInputs",
    "ExperimentReport",
    "GenerationTrace",
    "Lexicon",
    "LogitFrame",
    "MockScenario",
    "MockSession",
    "ModelSession",
    "PdmSeries",
    "PopeAnswer",
    "PopeReport",
    "PreferencePair",
    "SessionDescriptor",
    "SimSpec",
    "StepRecord",
    "adjust_scores",
    "aggregate_traces",
    "bt_preference",
    "build_pairs",
    "chair",
    "compare_runs",
    "contrastive_adjust",
    "decode",
    "distance",
    "dpo_loss",
    "estimate_decay_rate",
    "extract_objects",
    "frame_at",
    "grounded_set",
    "m3id_adjust",
    "m3id_gate",
    "open_bridge_session",
    "open_mock_session",
    "pdm_h",
    "pdm_r",
    "pmi_adjust",
    "pope_score",
    "read_trace",
    "run_experiment",
    "select_greedy",
    "select_multinomial",
    "shannon_entropy",
    "trace_series",
    "write_trace",
]
