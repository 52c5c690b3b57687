"""Custody transfer: CTEB codec, decision policies, custody state, CCS.

A custodian stamps a CTEB naming itself, stores the bundle under a
retention constraint, and retransmits until a custody signal releases
it. Downstream acceptance replaces the CTEB so later signals flow to
the new custodian.
"""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum, IntEnum

from . import cbor
from .bundle import CTEB_BLOCK_TYPE, Bundle, PrimaryBlockData
from .cbor import CborDecodeError
from .eid import EndpointId, eid_from_item, eid_item
from .errors import ConfigError, DuplicateCteb, MalformedBlock, MalformedEid, MalformedSignal
from .identity import (
    DEFAULT_MAX_SEQUENCE,
    BundleTag,
    SequenceCounterTable,
    SequenceScope,
    derive_tag,
)
from .reporting import (
    CCS_RECORD_TYPE,
    DraftTable,
    RecordResult,
    SignalDraft,
    TIME_EPSILON,
    _unwrap_record,
    parse_signal_content,
    signal_content,
)


class DispositionCode(IntEnum):
    ACCEPTED = 1
    ACCEPTED_DUPLICATE = 2
    REFUSED_DROPPED = -1
    REFUSED_FORWARDED = -2


class RetentionConstraint(Enum):
    COMPRESSED_CUSTODY_PENDING = "custody-pending"
    COMPRESSED_CUSTODY_ACCEPTED = "custody-accepted"


@dataclass(frozen=True)
class CtebData:
    """Custody block fields; all three are mandatory on the wire."""

    sequence_number: int
    sequence_id: int  # 0 = the per-destination scope
    block_source: EndpointId

    def tag(self, bundle_primary: PrimaryBlockData) -> BundleTag:
        return derive_tag(
            self.sequence_id, self.sequence_number, self.block_source, bundle_primary
        )


def encode_cteb(d: CtebData) -> bytes:
    return cbor.encode([d.sequence_number, d.sequence_id, eid_item(d.block_source)])


def decode_cteb(data: bytes) -> CtebData:
    try:
        item = cbor.decode(data)
    except CborDecodeError as exc:
        raise MalformedBlock(str(exc)) from exc
    if not isinstance(item, list) or len(item) != 3:
        raise MalformedBlock("CTEB is an array of exactly 3 fields")
    if not all(isinstance(v, int) and v >= 0 for v in item[:2]):
        raise MalformedBlock("CTEB integer field is malformed")
    try:
        block_source = eid_from_item(item[2])
    except MalformedEid as exc:
        raise MalformedBlock(f"CTEB block source: {exc}") from exc
    return CtebData(item[0], item[1], block_source)


# -- decision policies --------------------------------------------------------


class CustodyDecision(Enum):
    ACCEPT = "accept"
    REFUSE_DROP = "drop"
    REFUSE_FORWARD = "forward"


class AlwaysAccept:
    def decide(self, tag: BundleTag, bundle: Bundle) -> CustodyDecision:
        return CustodyDecision.ACCEPT


class ScriptedPolicy:
    """Explicit decision lists per sequence number, consumed per arrival."""

    def __init__(self, decisions: dict[int, list], default=CustodyDecision.ACCEPT):
        self._pending = {
            number: [CustodyDecision(d) for d in script]
            for number, script in decisions.items()
        }
        self.default = CustodyDecision(default)

    def decide(self, tag: BundleTag, bundle: Bundle) -> CustodyDecision:
        script = self._pending.get(tag.sequence_number)
        if script:
            return script.pop(0)
        return self.default


class ProbabilisticPolicy:
    """Seeded accept/drop/forward draw with fixed branch probabilities."""

    def __init__(self, p_accept: float, p_drop: float, p_forward: float, seed=0):
        if abs(p_accept + p_drop + p_forward - 1.0) > 1e-9:
            raise ConfigError("custody policy probabilities must sum to 1")
        self.p_accept = p_accept
        self.p_drop = p_drop
        self._rng = random.Random(f"custody-policy:{seed}")

    def decide(self, tag: BundleTag, bundle: Bundle) -> CustodyDecision:
        draw = self._rng.random()
        if draw < self.p_accept:
            return CustodyDecision.ACCEPT
        if draw < self.p_accept + self.p_drop:
            return CustodyDecision.REFUSE_DROP
        return CustodyDecision.REFUSE_FORWARD


def evaluate_custody(policy, bundle: Bundle, cteb: CtebData) -> CustodyDecision:
    return policy.decide(cteb.tag(bundle.primary), bundle)


# -- custodian state -----------------------------------------------------------


@dataclass
class CustodyRecord:
    tag: BundleTag
    store_key: str
    retransmission_deadline: float
    retransmit_count: int = 0


@dataclass(frozen=True)
class CcsAction:
    """One outcome of processing a custody signal entry."""

    kind: str  # release | release_dup | retransmit | reset | unknown | reserved
    code: int
    tag: BundleTag
    record: CustodyRecord | None = None


def build_ccs(draft: SignalDraft) -> bytes:
    """Custody signals always omit the block source: it is by definition
    the administrative endpoint of the custodian receiving the signal."""
    if not draft.entries:
        raise MalformedSignal("cannot build a signal from an empty draft")
    content = signal_content(draft.entries, None, omit_all_sources=True)
    return cbor.encode([CCS_RECORD_TYPE, content])


def parse_ccs(
    data: bytes, receiver_admin: EndpointId, max_sequence: int = DEFAULT_MAX_SEQUENCE
) -> dict[int, set[BundleTag]]:
    content = _unwrap_record(data, CCS_RECORD_TYPE, "custody signal")
    parsed = parse_signal_content(content, receiver_admin, max_sequence)
    if 0 in parsed:
        raise MalformedSignal("disposition 0 is neither acceptance nor refusal")
    return parsed


class CustodyManager:
    """Custody state owned by one node: records, drafts, duplicate cache.

    The manager shares the node's sequence counters and bundle store; the
    node performs routing, emission and logging around it.
    """

    def __init__(
        self,
        admin_eid: EndpointId,
        counters: SequenceCounterTable,
        store,
        timer: float,
        drafts: DraftTable,
        duplicate_cache: int = 65536,
        backoff_enabled: bool = False,
    ):
        self.admin_eid = admin_eid
        self.counters = counters
        self.store = store
        self.timer = timer
        self.drafts = drafts
        self.records: dict[BundleTag, CustodyRecord] = {}
        self.timer_scale = 1.0
        self.backoff_enabled = backoff_enabled
        self._recent: OrderedDict[BundleTag, None] = OrderedDict()
        self._recent_cap = duplicate_cache
        self._acked_numbers: dict[SequenceScope, set[int]] = {}

    # - duplicate tracking -

    def is_duplicate(self, tag: BundleTag) -> bool:
        return tag in self._recent

    def note_accepted(self, tag: BundleTag) -> None:
        self._recent[tag] = None
        while len(self._recent) > self._recent_cap:
            self._recent.popitem(last=False)

    # - dispositions -

    def queue_disposition(
        self, destination: EndpointId, code: int, tag: BundleTag, now: float
    ) -> RecordResult:
        return self.drafts.record(destination.administrative(), code, tag, now)

    # - taking custody -

    def effective_timer(self) -> float:
        return self.timer * self.timer_scale

    def request_custody(self, bundle: Bundle, now: float) -> tuple[Bundle, BundleTag]:
        """Stamp a fresh CTEB on a locally sourced bundle and store it."""
        if bundle.block_of_type(CTEB_BLOCK_TYPE) is not None:
            raise DuplicateCteb("bundle already carries a custody block")
        stamped, tag = self._stamp(bundle)
        key = self.store.put(
            stamped, {RetentionConstraint.COMPRESSED_CUSTODY_ACCEPTED}
        )
        self.records[tag] = CustodyRecord(tag, key, now + self.effective_timer())
        return stamped, tag

    def accept_custody(
        self, bundle: Bundle, previous: CtebData, now: float
    ) -> tuple[Bundle, BundleTag, RecordResult]:
        """Become custodian: queue acceptance upstream, restamp, store.

        The caller has already placed the bundle in the store under the
        PENDING constraint; on StoreFull from that step it refuses
        instead of calling this.
        """
        previous_tag = previous.tag(bundle.primary)
        stamped, tag = self._stamp(bundle, replace_number=_cteb_block_number(bundle))
        key = self.store.replace(bundle.primary.identity(), stamped)
        self.store.swap_constraint(
            key,
            RetentionConstraint.COMPRESSED_CUSTODY_PENDING,
            RetentionConstraint.COMPRESSED_CUSTODY_ACCEPTED,
        )
        self.records[tag] = CustodyRecord(tag, key, now + self.effective_timer())
        self.note_accepted(previous_tag)
        result = self.queue_disposition(
            previous.block_source, int(DispositionCode.ACCEPTED), previous_tag, now
        )
        return stamped, tag, result

    def accept_at_destination(
        self, bundle: Bundle, cteb: CtebData, now: float
    ) -> RecordResult:
        """Final acceptance on delivery: signal upstream, keep nothing."""
        previous_tag = cteb.tag(bundle.primary)
        self.note_accepted(previous_tag)
        return self.queue_disposition(
            cteb.block_source, int(DispositionCode.ACCEPTED), previous_tag, now
        )

    def queue_duplicate(
        self, cteb: CtebData, bundle: Bundle, now: float
    ) -> RecordResult:
        tag = cteb.tag(bundle.primary)
        return self.queue_disposition(
            cteb.block_source, int(DispositionCode.ACCEPTED_DUPLICATE), tag, now
        )

    def refuse_custody(
        self, bundle: Bundle, cteb: CtebData, mode: CustodyDecision, now: float
    ) -> RecordResult:
        """Queue the refusal disposition; the CTEB stays untouched."""
        code = (
            DispositionCode.REFUSED_DROPPED
            if mode == CustodyDecision.REFUSE_DROP
            else DispositionCode.REFUSED_FORWARDED
        )
        tag = cteb.tag(bundle.primary)
        return self.queue_disposition(cteb.block_source, int(code), tag, now)

    def _stamp(
        self, bundle: Bundle, replace_number: int | None = None
    ) -> tuple[Bundle, BundleTag]:
        scope = SequenceScope.for_destination(bundle.primary.destination)
        number = self.counters.next_sequence_number(scope)
        cteb = CtebData(number, 0, self.admin_eid)
        data = encode_cteb(cteb)
        if replace_number is None:
            stamped = bundle.insert_extension(CTEB_BLOCK_TYPE, data)
        else:
            stamped = bundle.replace_block(replace_number, data)
        return stamped, BundleTag(scope, number, self.admin_eid)

    # - reacting to custody signals -

    def process_ccs(
        self, parsed: dict[int, set[BundleTag]], now: float
    ) -> list[CcsAction]:
        """Apply disposition semantics; iteration order is deterministic."""
        actions = []
        for code in sorted(parsed):
            for tag in sorted(parsed[code], key=BundleTag.sort_key):
                actions.append(self._apply_disposition(code, tag, now))
        return actions

    def _apply_disposition(self, code: int, tag: BundleTag, now: float) -> CcsAction:
        if code not in (1, 2, -1, -2):
            return CcsAction("reserved", code, tag)
        record = self.records.get(tag)
        if record is None:
            return CcsAction("unknown", code, tag)
        if code in (1, 2):
            del self.records[tag]
            self._note_acked(tag)
            self.store.remove_constraint(
                record.store_key, RetentionConstraint.COMPRESSED_CUSTODY_ACCEPTED
            )
            if code == 2 and self.backoff_enabled:
                self.timer_scale = min(self.timer_scale * 2.0, 8.0)
            return CcsAction("release" if code == 1 else "release_dup", code, tag, record)
        if code == -1:
            self.mark_retransmitted(record, now)
            return CcsAction("retransmit", code, tag, record)
        record.retransmission_deadline = now + self.effective_timer()
        return CcsAction("reset", code, tag, record)

    def _note_acked(self, tag: BundleTag) -> None:
        if tag.scope.is_per_destination:
            self._acked_numbers.setdefault(tag.scope, set()).add(tag.sequence_number)

    def gap_candidates(self) -> list[CustodyRecord]:
        """Live records sitting inside a hole of the acceptance history.

        Only meaningful for per-destination scopes; used by the optional
        early-retransmission trigger.
        """
        candidates = []
        for scope, acked in self._acked_numbers.items():
            hi = max(acked)
            for record in self.records.values():
                if record.tag.scope == scope and record.tag.sequence_number < hi:
                    candidates.append(record)
        return sorted(candidates, key=lambda r: r.tag.sort_key())

    # - retransmission bookkeeping -

    def mark_retransmitted(self, record: CustodyRecord, now: float) -> None:
        record.retransmission_deadline = now + self.effective_timer()
        record.retransmit_count += 1

    def due_records(self, now: float) -> list[CustodyRecord]:
        due = [
            r
            for r in self.records.values()
            if r.retransmission_deadline <= now + TIME_EPSILON
        ]
        return sorted(due, key=lambda r: r.tag.sort_key())

    def record_for_key(self, store_key: str) -> CustodyRecord | None:
        for record in self.records.values():
            if record.store_key == store_key:
                return record
        return None

    def drop_record(self, record: CustodyRecord) -> None:
        self.records.pop(record.tag, None)

    def next_deadline(self) -> float | None:
        if not self.records:
            return None
        return min(r.retransmission_deadline for r in self.records.values())


def _cteb_block_number(bundle: Bundle) -> int:
    block = bundle.block_of_type(CTEB_BLOCK_TYPE)
    if block is None:
        raise MalformedBlock("bundle has no custody block to replace")
    return block.block_number
