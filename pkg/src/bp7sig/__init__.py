"""BPv7 compressed bundle reporting and custody signalling.

Wire formats for the two reliability extension blocks (CREB, CTEB) and
their aggregate administrative records (CRS, CCS), a bundle agent that
speaks them, and a deterministic scenario simulator.
"""

from .bundle import (
    Bundle,
    CanonicalBlock,
    CrcType,
    PrimaryBlockData,
    decode_bundle,
    encode_bundle,
    make_bundle,
)
from .custody import (
    AlwaysAccept,
    CcsAction,
    CtebData,
    CustodyDecision,
    CustodyManager,
    CustodyRecord,
    DispositionCode,
    ProbabilisticPolicy,
    RetentionConstraint,
    ScriptedPolicy,
    build_ccs,
    decode_cteb,
    encode_cteb,
    evaluate_custody,
    parse_ccs,
)
from .eid import EndpointId, decode_eid, encode_eid
from .errors import (
    Bp7Error,
    ConfigError,
    CrcMismatch,
    DuplicateCteb,
    MalformedBlock,
    MalformedBundle,
    MalformedEid,
    MalformedSignal,
    Overflow,
    PrefixViolation,
    StoreFull,
)
from .eventlog import Event, EventLog
from .identity import (
    BundleTag,
    SequenceCounterTable,
    SequenceScope,
    derive_tag,
)
from .node import BundleStore, Mib, Node, NodeConfig, NodeOutput
from .reporting import (
    BundleSequence,
    BundleSequenceCollection,
    CrebData,
    DraftTable,
    ReportReason,
    SignalDraft,
    build_crs,
    coalesce,
    decode_creb,
    detect_gaps,
    encode_creb,
    expand,
    parse_crs,
    reason_mask,
    record_event,
    resolve_report_destination,
)
from .scenarios import (
    eo_probabilistic_scenario,
    eo_scenario,
    load_scenario,
    lunar_probabilistic_scenario,
    lunar_scenario,
)
from .sim import Link, LossModel, Metrics, Scenario, Simulation, TrafficSpec, run, summarize

__version__ = "0.1.0"
