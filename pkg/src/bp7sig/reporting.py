"""Compressed bundle reporting: CREB codec, range coalescing, CRS signals.

Also home of the pieces shared with custody signalling: bundle
sequences and collections, their wire form, and the pending-signal
draft tables with the count/age flush policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from . import cbor
from .bundle import CREB_BLOCK_TYPE, Bundle, PrimaryBlockData
from .cbor import CborDecodeError
from .eid import EndpointId, eid_from_item, eid_item
from .errors import (
    MalformedBlock,
    MalformedEid,
    MalformedSignal,
    Overflow,
    PrefixViolation,
)
from .identity import DEFAULT_MAX_SEQUENCE, BundleTag, SequenceScope, derive_tag

# Administrative record type codes (experimental range; RFC 9171 gives
# 1 to the per-bundle status report).
CRS_RECORD_TYPE = 64
CCS_RECORD_TYPE = 65

# Tolerance for "age >= max_pending" checks: well below the 1 us event
# granularity, absorbs float error from time subtraction.
TIME_EPSILON = 1e-9


class ReportReason(IntEnum):
    RECEPTION = 0
    FORWARDING = 1
    DELIVERY = 2
    DELETION = 3


def reason_mask(reasons) -> int:
    """Bitmask encoding a set of report reasons (bit k = reason code k)."""
    mask = 0
    for reason in reasons:
        mask |= 1 << int(reason)
    return mask


@dataclass(frozen=True)
class CrebData:
    """CREB fields exactly as carried on the wire.

    Optional fields keep their wire presence so re-encoding is
    byte-identical; the defaulting rules (absent id -> 0, absent block
    source -> bundle source) are applied by tag() and
    resolve_report_destination() instead.
    """

    sequence_number: int
    sequence_id: int | None = None
    report_types: int | None = None  # bitmask, bit k <=> reason code k
    block_source: EndpointId | None = None
    report_endpoint: EndpointId | None = None

    def wants(self, reason: ReportReason) -> bool:
        return bool((self.report_types or 0) & (1 << int(reason)))

    def tag(self, bundle_primary: PrimaryBlockData) -> BundleTag:
        return derive_tag(
            self.sequence_id, self.sequence_number, self.block_source, bundle_primary
        )


def encode_creb(d: CrebData) -> bytes:
    """Prefix-encoded array of 1-5 fields; later fields need earlier ones."""
    fields = [
        d.sequence_number,
        d.sequence_id,
        d.report_types,
        None if d.block_source is None else eid_item(d.block_source),
        None if d.report_endpoint is None else eid_item(d.report_endpoint),
    ]
    arity = 0
    for index, value in enumerate(fields):
        if value is not None:
            if index != arity:
                raise PrefixViolation(
                    "field at position %d requires all earlier fields" % index
                )
            arity += 1
    return cbor.encode(fields[:arity])


def decode_creb(data: bytes) -> CrebData:
    try:
        item = cbor.decode(data)
    except CborDecodeError as exc:
        raise MalformedBlock(str(exc)) from exc
    if not isinstance(item, list) or not 1 <= len(item) <= 5:
        raise MalformedBlock("CREB is not an array of 1-5 fields")
    for value in item[:3]:
        if not isinstance(value, int) or value < 0:
            raise MalformedBlock("CREB integer field is malformed")
    try:
        block_source = eid_from_item(item[3]) if len(item) > 3 else None
        report_endpoint = eid_from_item(item[4]) if len(item) > 4 else None
    except MalformedEid as exc:
        raise MalformedBlock(f"CREB endpoint field: {exc}") from exc
    return CrebData(
        sequence_number=item[0],
        sequence_id=item[1] if len(item) > 1 else None,
        report_types=item[2] if len(item) > 2 else None,
        block_source=block_source,
        report_endpoint=report_endpoint,
    )


def resolve_report_destination(
    d: CrebData, bundle_primary: PrimaryBlockData
) -> EndpointId:
    """Where this CREB's reports go: report endpoint, else block source,
    else the source named in the primary block."""
    if d.report_endpoint is not None:
        return d.report_endpoint
    if d.block_source is not None:
        return d.block_source
    return bundle_primary.source


@dataclass(frozen=True)
class BundleSequence:
    """A run of consecutive sequence numbers in one identification scope."""

    first: int
    length: int
    scope: SequenceScope
    block_source: EndpointId | None = None  # None = receiver's admin endpoint

    def numbers(self) -> range:
        return range(self.first, self.first + self.length)


@dataclass(frozen=True)
class BundleSequenceCollection:
    sequences: tuple[BundleSequence, ...]

    def __len__(self) -> int:
        return len(self.sequences)


def coalesce(tags) -> BundleSequenceCollection:
    """Compress a tag set into maximal runs, grouped per (scope, source).

    Output is deterministic: groups ordered by (scope text, source text),
    runs ascending by first number; expanding it reproduces the input.
    """
    groups: dict[tuple[SequenceScope, EndpointId], set[int]] = {}
    for tag in tags:
        groups.setdefault((tag.scope, tag.block_source), set()).add(tag.sequence_number)
    sequences = []
    for scope, source in sorted(groups, key=lambda k: (k[0].text(), str(k[1]))):
        numbers = sorted(groups[(scope, source)])
        start = prev = numbers[0]
        for n in numbers[1:]:
            if n != prev + 1:
                sequences.append(BundleSequence(start, prev - start + 1, scope, source))
                start = n
            prev = n
        sequences.append(BundleSequence(start, prev - start + 1, scope, source))
    return BundleSequenceCollection(tuple(sequences))


def expand(
    collection: BundleSequenceCollection,
    receiver_admin_eid: EndpointId,
    max_sequence: int = DEFAULT_MAX_SEQUENCE,
) -> set[BundleTag]:
    """Inverse of coalesce; absent block sources become the receiver's."""
    tags: set[BundleTag] = set()
    for seq in collection.sequences:
        if seq.first + seq.length - 1 > max_sequence:
            raise Overflow(
                f"sequence {seq.first}+{seq.length} exceeds max {max_sequence}"
            )
        source = seq.block_source if seq.block_source is not None else receiver_admin_eid
        for n in seq.numbers():
            tags.add(BundleTag(seq.scope, n, source))
    return tags


# -- wire form of sequences and signal maps ---------------------------------


def _sequence_item(seq: BundleSequence, omit_source: bool) -> list:
    if seq.scope.is_per_destination:
        third = eid_item(seq.scope.destination)
    else:
        third = seq.scope.explicit_id
    items = [seq.first, seq.length, third]
    if not omit_source:
        if seq.block_source is None:
            raise MalformedSignal("sequence has no block source to include")
        items.append(eid_item(seq.block_source))
    return items


def _sequence_from_item(item) -> BundleSequence:
    if not isinstance(item, list) or len(item) not in (3, 4):
        raise MalformedSignal("bundle sequence is not a 3/4-element array")
    first, length, scope_item = item[0], item[1], item[2]
    if not isinstance(first, int) or first < 0:
        raise MalformedSignal("first sequence number is malformed")
    if not isinstance(length, int) or length < 1:
        raise MalformedSignal("sequence length must be at least 1")
    if isinstance(scope_item, int):
        if scope_item == 0:
            raise MalformedSignal("scope id 0 is written as the destination EID")
        scope = SequenceScope.explicit(scope_item)
    else:
        try:
            scope = SequenceScope.for_destination(eid_from_item(scope_item))
        except MalformedEid as exc:
            raise MalformedSignal(f"scope endpoint: {exc}") from exc
    block_source = None
    if len(item) == 4:
        try:
            block_source = eid_from_item(item[3])
        except MalformedEid as exc:
            raise MalformedSignal(f"sequence block source: {exc}") from exc
    return BundleSequence(first, length, scope, block_source)


def signal_content(
    entries: dict[int, set[BundleTag]],
    receiver_admin: EndpointId | None,
    omit_all_sources: bool = False,
) -> dict:
    """Signal map structure: code -> encoded collection, keys ascending.

    A sequence's block source is omitted when it equals the receiving
    node's administrative endpoint (or always, for custody signals).
    """
    content: dict[int, list] = {}
    for code in sorted(entries):
        items = []
        for seq in coalesce(entries[code]).sequences:
            omit = omit_all_sources or seq.block_source == receiver_admin
            items.append(_sequence_item(seq, omit))
        content[code] = items
    return content


def parse_signal_content(
    content, receiver_admin: EndpointId, max_sequence: int = DEFAULT_MAX_SEQUENCE
) -> dict[int, set[BundleTag]]:
    if not isinstance(content, dict):
        raise MalformedSignal("signal content is not a map")
    parsed: dict[int, set[BundleTag]] = {}
    for code, sequences in content.items():
        if not isinstance(sequences, list):
            raise MalformedSignal("collection is not an array")
        collection = BundleSequenceCollection(
            tuple(_sequence_from_item(item) for item in sequences)
        )
        parsed[code] = expand(collection, receiver_admin, max_sequence)
    return parsed


def _unwrap_record(data: bytes, expected_type: int, what: str):
    try:
        item = cbor.decode(data)
    except CborDecodeError as exc:
        raise MalformedSignal(str(exc)) from exc
    if not isinstance(item, list) or len(item) != 2:
        raise MalformedSignal("administrative record is not [type, content]")
    if item[0] != expected_type:
        raise MalformedSignal(f"record type {item[0]!r} is not a {what}")
    return item[1]


# -- pending signal drafts ---------------------------------------------------


@dataclass
class SignalDraft:
    """A pending CRS or CCS accumulating tags until a flush threshold.

    Flushes when the count of distinct tags reaches max_bundles, or when
    it has been pending for max_pending. Once flushed it is frozen.
    """

    destination: EndpointId
    created_at: float
    max_bundles: int
    max_pending: float
    entries: dict[int, set[BundleTag]] = field(default_factory=dict)
    flushed: bool = False

    def distinct_tags(self) -> set[BundleTag]:
        out: set[BundleTag] = set()
        for tags in self.entries.values():
            out |= tags
        return out

    def add(self, code: int, tag: BundleTag) -> bool:
        if self.flushed:
            raise RuntimeError("flushed drafts are immutable")
        self.entries.setdefault(code, set()).add(tag)
        return len(self.distinct_tags()) >= self.max_bundles


@dataclass(frozen=True)
class RecordResult:
    draft: SignalDraft
    created: bool  # a new draft was opened by this entry
    flushed: bool  # the entry hit the bundle threshold


class DraftTable:
    """Pending signals keyed by destination; one draft per destination."""

    def __init__(self, max_bundles: int, max_pending: float):
        self.max_bundles = max_bundles
        self.max_pending = max_pending
        self.drafts: dict[EndpointId, SignalDraft] = {}

    def record(
        self, destination: EndpointId, code: int, tag: BundleTag, now: float
    ) -> RecordResult:
        draft = self.drafts.get(destination)
        created = draft is None
        if created:
            draft = SignalDraft(destination, now, self.max_bundles, self.max_pending)
            self.drafts[destination] = draft
        flushed = draft.add(code, tag)
        if flushed:
            self._detach(draft)
        return RecordResult(draft, created, flushed)

    def _detach(self, draft: SignalDraft) -> None:
        draft.flushed = True
        del self.drafts[draft.destination]

    def poll_flush(self, now: float) -> list[SignalDraft]:
        due = [
            d
            for d in self.drafts.values()
            if now - d.created_at >= d.max_pending - TIME_EPSILON
        ]
        for draft in due:
            self._detach(draft)
        return due

    def next_deadline(self) -> float | None:
        if not self.drafts:
            return None
        return min(d.created_at + d.max_pending for d in self.drafts.values())


def record_event(
    drafts: DraftTable,
    local_admin_eid: EndpointId,
    bundle: Bundle,
    reason: ReportReason,
    now: float,
) -> list[tuple[EndpointId, BundleTag, RecordResult]]:
    """Feed one bundle event to every matching CREB on the bundle.

    The node that inserted a CREB does not report on its own block, so
    tags whose block source is this node are skipped. Returns one entry
    per recorded (destination, tag); callers emit any flushed drafts.
    """
    recorded = []
    for block in bundle.blocks_of_type(CREB_BLOCK_TYPE):
        creb = decode_creb(block.type_specific_data)
        if not creb.wants(reason):
            continue
        tag = creb.tag(bundle.primary)
        if tag.block_source == local_admin_eid:
            continue
        destination = resolve_report_destination(creb, bundle.primary)
        result = drafts.record(destination, int(reason), tag, now)
        recorded.append((destination, tag, result))
    return recorded


def build_crs(draft: SignalDraft) -> bytes:
    """Administrative record bytes for a reporting signal.

    Block sources equal to the administrative endpoint of the node the
    signal is destined to are omitted on the wire.
    """
    if not draft.entries:
        raise MalformedSignal("cannot build a signal from an empty draft")
    receiver_admin = draft.destination.administrative()
    content = signal_content(draft.entries, receiver_admin)
    return cbor.encode([CRS_RECORD_TYPE, content])


def parse_crs(
    data: bytes, receiver_admin: EndpointId, max_sequence: int = DEFAULT_MAX_SEQUENCE
) -> dict[int, set[BundleTag]]:
    content = _unwrap_record(data, CRS_RECORD_TYPE, "reporting signal")
    parsed = parse_signal_content(content, receiver_admin, max_sequence)
    for code in parsed:
        if code < 0:
            raise MalformedSignal("report reasons are unsigned integers")
    return parsed


def detect_gaps(
    reported, scope: SequenceScope, lo: int, hi: int
) -> set[int]:
    """Sequence numbers in [lo, hi] missing from the reported tags."""
    if lo > hi:
        raise ValueError("empty range: lo > hi")
    seen = {t.sequence_number for t in reported if t.scope == scope}
    return {n for n in range(lo, hi + 1) if n not in seen}
