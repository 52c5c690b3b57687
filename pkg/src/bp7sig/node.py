"""The bundle agent: reception pipeline, routing, store, signal dispatch.

One Node owns all of its mutable state (store, counters, drafts,
custody records) and is driven by three entry points: on_receive,
on_timer and send_adu. Each returns the emissions, log events and
timer requests the caller (normally the simulator) should act on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bundle import (
    CREB_BLOCK_TYPE,
    CTEB_BLOCK_TYPE,
    FLAG_ADMIN_RECORD,
    Bundle,
    CanonicalBlock,
    PrimaryBlockData,
    decode_bundle,
    encode_bundle,
    make_bundle,
)
from .cbor import CborDecodeError
from .custody import (
    CCS_RECORD_TYPE,
    AlwaysAccept,
    CustodyDecision,
    CustodyManager,
    CustodyRecord,
    RetentionConstraint,
    decode_cteb,
    evaluate_custody,
    parse_ccs,
)
from .eid import EndpointId
from .errors import Bp7Error, ConfigError, StoreFull
from .eventlog import Event, detail_text
from .identity import DEFAULT_MAX_SEQUENCE, SequenceCounterTable, SequenceScope
from .reporting import (
    CRS_RECORD_TYPE,
    CrebData,
    DraftTable,
    ReportReason,
    SignalDraft,
    TIME_EPSILON,
    build_crs,
    decode_creb,
    encode_creb,
    parse_crs,
    reason_mask,
    record_event,
)
from .custody import build_ccs
from . import cbor


@dataclass
class Mib:
    """Operator-configurable node parameters."""

    crs_max_bundles: int = 100
    crs_max_pending: float = 10.0
    ccs_max_bundles: int = 100
    ccs_max_pending: float = 15.0
    retransmission_timer: float = 30.0
    sequence_max: int = DEFAULT_MAX_SEQUENCE
    custody_policy: object = field(default_factory=AlwaysAccept)
    creb_policy: tuple | None = None  # default report types for sent ADUs
    lifetime: float = 3600.0  # seconds
    store_capacity: int | None = None
    duplicate_cache: int = 65536
    retransmit_on_contact: bool = True
    gap_retransmit: bool = False
    code2_backoff: bool = False


@dataclass
class NodeConfig:
    name: str
    node_number: int
    routes: dict[int, int] = field(default_factory=dict)
    mib: Mib = field(default_factory=Mib)

    @property
    def admin_eid(self) -> EndpointId:
        return EndpointId(self.node_number, 0)


@dataclass
class StoreEntry:
    bundle: Bundle
    constraints: set[RetentionConstraint]
    expiry: float  # seconds


class BundleStore:
    """Bundles retained under constraints, keyed by primary identity.

    An entry is discarded automatically when its last constraint is
    removed; nothing with a live constraint can be dropped.
    """

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.entries: dict[str, StoreEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def put(self, bundle: Bundle, constraints: set[RetentionConstraint]) -> str:
        key = bundle.primary.identity()
        if key not in self.entries and self.capacity is not None:
            if len(self.entries) >= self.capacity:
                raise StoreFull(f"store holds {len(self.entries)} bundles")
        expiry = (bundle.primary.creation_time + bundle.primary.lifetime) / 1000.0
        self.entries[key] = StoreEntry(bundle, set(constraints), expiry)
        return key

    def replace(self, key: str, bundle: Bundle) -> str:
        self.entries[key].bundle = bundle
        return key

    def get(self, key: str) -> Bundle | None:
        entry = self.entries.get(key)
        return entry.bundle if entry else None

    def swap_constraint(self, key, old: RetentionConstraint, new: RetentionConstraint):
        entry = self.entries[key]
        entry.constraints.discard(old)
        entry.constraints.add(new)

    def remove_constraint(self, key: str, constraint: RetentionConstraint) -> bool:
        """Drop one constraint; returns True if the entry was discarded."""
        entry = self.entries.get(key)
        if entry is None:
            return False
        entry.constraints.discard(constraint)
        if not entry.constraints:
            del self.entries[key]
            return True
        return False

    def expired(self, now: float) -> list[str]:
        return sorted(
            key for key, e in self.entries.items() if now > e.expiry + TIME_EPSILON
        )

    def constrained_count(self, constraint: RetentionConstraint) -> int:
        return sum(1 for e in self.entries.values() if constraint in e.constraints)


@dataclass
class Emission:
    next_hop: int
    data: bytes
    tag_text: str
    bundle_id: str
    admin: bool


@dataclass
class NodeOutput:
    emissions: list[Emission] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    timers: list[float] = field(default_factory=list)

    def merge(self, other: "NodeOutput") -> None:
        self.emissions.extend(other.emissions)
        self.events.extend(other.events)
        self.timers.extend(other.timers)


def _bundle_tag_text(bundle: Bundle) -> str:
    """Log-column identity: the CTEB tag, else the first CREB tag."""
    block = bundle.block_of_type(CTEB_BLOCK_TYPE)
    if block is not None:
        return decode_cteb(block.type_specific_data).tag(bundle.primary).text()
    block = bundle.block_of_type(CREB_BLOCK_TYPE)
    if block is not None:
        return decode_creb(block.type_specific_data).tag(bundle.primary).text()
    return "-"


class Node:
    def __init__(self, config: NodeConfig):
        self.config = config
        self.name = config.name
        self.admin_eid = config.admin_eid
        mib = config.mib
        self.counters = SequenceCounterTable(mib.sequence_max)
        self.store = BundleStore(mib.store_capacity)
        self.crs_drafts = DraftTable(mib.crs_max_bundles, mib.crs_max_pending)
        self.ccs_drafts = DraftTable(mib.ccs_max_bundles, mib.ccs_max_pending)
        self.custody = CustodyManager(
            self.admin_eid,
            self.counters,
            self.store,
            mib.retransmission_timer,
            self.ccs_drafts,
            duplicate_cache=mib.duplicate_cache,
            backoff_enabled=mib.code2_backoff,
        )
        self.crs_handler = None  # optional reaction hook: fn(node, parsed, now, out)
        self._creation_seq = 0

    # -- small helpers --

    def local(self, eid: EndpointId) -> bool:
        return eid.node_number == self.config.node_number

    def _route(self, destination: EndpointId) -> int | None:
        if self.local(destination):
            return self.config.node_number
        return self.config.routes.get(destination.node_number)

    def _ev(self, now: float, kind: str, tag: str = "-", **fields) -> Event:
        return Event(now, self.name, kind, tag, detail_text(**fields))

    def _next_creation_seq(self) -> int:
        value = self._creation_seq
        self._creation_seq += 1
        return value

    # -- reporting plumbing --

    def _record_reports(self, bundle: Bundle, reason: ReportReason, now, out) -> None:
        for destination, tag, result in record_event(
            self.crs_drafts, self.admin_eid, bundle, reason, now
        ):
            out.events.append(
                self._ev(
                    now,
                    "report_queued",
                    tag.text(),
                    dest=destination,
                    reason=int(reason),
                )
            )
            if result.created and not result.flushed:
                out.timers.append(result.draft.created_at + result.draft.max_pending)
            if result.flushed:
                self._emit_signal(result.draft, "crs", now, out)

    def _after_disposition(self, tag, code, result, now, out) -> None:
        out.events.append(
            self._ev(
                now,
                "disposition_queued",
                tag.text(),
                dest=result.draft.destination,
                code=code,
            )
        )
        if result.created and not result.flushed:
            out.timers.append(result.draft.created_at + result.draft.max_pending)
        if result.flushed:
            self._emit_signal(result.draft, "ccs", now, out)

    def _emit_signal(self, draft: SignalDraft, kind: str, now: float, out) -> None:
        payload = build_crs(draft) if kind == "crs" else build_ccs(draft)
        primary = PrimaryBlockData(
            destination=draft.destination,
            source=self.admin_eid,
            report_to=self.admin_eid,
            creation_time=int(round(now * 1000)),
            creation_sequence=self._next_creation_seq(),
            lifetime=int(self.config.mib.lifetime * 1000),
            processing_flags=FLAG_ADMIN_RECORD,
        )
        carrier = make_bundle(primary, payload=payload)
        out.events.append(
            self._ev(
                now,
                f"{kind}_send",
                dest=draft.destination,
                count=len(draft.distinct_tags()),
                created=f"{draft.created_at:.6f}",
                payload=payload.hex(),
            )
        )
        self._emit_bundle(carrier, now, out, report_forwarding=False)

    # -- emission and deletion --

    def _emit_bundle(self, bundle: Bundle, now, out, report_forwarding=True) -> bool:
        next_hop = self._route(bundle.primary.destination)
        if next_hop is None or next_hop == self.config.node_number:
            self._delete_bundle(bundle, "no_route", now, out)
            return False
        out.emissions.append(
            Emission(
                next_hop,
                encode_bundle(bundle),
                _bundle_tag_text(bundle),
                bundle.primary.identity(),
                bundle.primary.is_admin_record,
            )
        )
        if report_forwarding:
            out.events.append(
                self._ev(
                    now,
                    "fwd",
                    _bundle_tag_text(bundle),
                    bundle=bundle.primary.identity(),
                    next=next_hop,
                )
            )
            self._record_reports(bundle, ReportReason.FORWARDING, now, out)
        return True

    def _delete_bundle(self, bundle: Bundle, reason: str, now, out) -> None:
        out.events.append(
            self._ev(
                now,
                "delete",
                _bundle_tag_text(bundle),
                bundle=bundle.primary.identity(),
                reason=reason,
                admin=1 if bundle.primary.is_admin_record else None,
            )
        )
        self._record_reports(bundle, ReportReason.DELETION, now, out)

    # -- entry points --

    def send_adu(
        self,
        source_client: EndpointId,
        dest_client: EndpointId,
        payload: bytes,
        now: float,
        reports=None,
        custody: bool = False,
        creb: bool = False,
        report_endpoint: EndpointId | None = None,
        sequence_id: int | None = None,
    ) -> NodeOutput:
        """Build and send one application bundle per the request options."""
        if not self.local(source_client):
            raise ConfigError(f"{source_client} is not a client of {self.name}")
        out = NodeOutput()
        if reports is None:
            reports = self.config.mib.creb_policy
        reasons = tuple(ReportReason(r) for r in (reports or ()))
        primary = PrimaryBlockData(
            destination=dest_client,
            source=source_client,
            report_to=source_client,
            creation_time=int(round(now * 1000)),
            creation_sequence=self._next_creation_seq(),
            lifetime=int(self.config.mib.lifetime * 1000),
        )
        extensions = []
        if reasons or creb:
            if sequence_id:
                scope = SequenceScope.explicit(sequence_id)
            else:
                scope = SequenceScope.for_destination(dest_client)
            number = self.counters.next_sequence_number(scope)
            creb_data = CrebData(
                sequence_number=number,
                sequence_id=scope.wire_id() if (reasons or report_endpoint) else None,
                report_types=reason_mask(reasons) if (reasons or report_endpoint) else None,
                block_source=self.admin_eid if report_endpoint else None,
                report_endpoint=report_endpoint,
            )
            extensions.append(CanonicalBlock(CREB_BLOCK_TYPE, 0, encode_creb(creb_data)))
        bundle = make_bundle(primary, extensions, payload)
        out.events.append(
            self._ev(
                now,
                "adu_send",
                _bundle_tag_text(bundle),
                bundle=primary.identity(),
                dest=dest_client,
            )
        )
        if self._route(dest_client) is None:
            self._delete_bundle(bundle, "no_route", now, out)
            return out
        if custody:
            bundle, tag = self.custody.request_custody(bundle, now)
            record = self.custody.records[tag]
            out.events.append(
                self._ev(
                    now,
                    "custody_request",
                    tag.text(),
                    bundle=primary.identity(),
                    deadline=f"{record.retransmission_deadline:.6f}",
                )
            )
            out.timers.append(record.retransmission_deadline)
        self._emit_bundle(bundle, now, out)
        return out

    def on_receive(self, data: bytes, now: float) -> NodeOutput:
        out = NodeOutput()
        try:
            bundle = decode_bundle(data)
        except Bp7Error as exc:
            out.events.append(self._ev(now, "malformed", error=type(exc).__name__))
            return out
        identity = bundle.primary.identity()
        out.events.append(
            self._ev(
                now,
                "recv",
                _bundle_tag_text(bundle),
                bundle=identity,
                admin=1 if bundle.primary.is_admin_record else None,
            )
        )
        expiry = (bundle.primary.creation_time + bundle.primary.lifetime) / 1000.0
        if now > expiry + TIME_EPSILON:
            self._delete_bundle(bundle, "lifetime", now, out)
            return out
        # Reception reports come before any custody evaluation.
        self._record_reports(bundle, ReportReason.RECEPTION, now, out)
        if self.local(bundle.primary.destination):
            if bundle.primary.is_admin_record:
                self._dispatch_admin(bundle, now, out)
            else:
                self._deliver(bundle, now, out)
        else:
            self._forward_pipeline(bundle, now, out)
        return out

    def on_timer(self, now: float) -> NodeOutput:
        """Flush due drafts, retransmit due custody bundles, sweep expiry."""
        out = NodeOutput()
        for draft in self.crs_drafts.poll_flush(now):
            self._emit_signal(draft, "crs", now, out)
        for draft in self.ccs_drafts.poll_flush(now):
            self._emit_signal(draft, "ccs", now, out)
        for record in self.custody.due_records(now):
            self._retransmit(record, "timer", now, out)
        for key in self.store.expired(now):
            bundle = self.store.get(key)
            record = self.custody.record_for_key(key)
            if record is not None:
                self.custody.drop_record(record)
            self.store.entries.pop(key, None)
            self._delete_bundle(bundle, "lifetime", now, out)
        return out

    def on_contact_start(self, next_hop: int, now: float) -> NodeOutput:
        """Re-forward custody bundles routed over a link that just came up."""
        out = NodeOutput()
        if not self.config.mib.retransmit_on_contact:
            return out
        for record in sorted(self.custody.records.values(), key=lambda r: r.tag.sort_key()):
            bundle = self.store.get(record.store_key)
            if bundle is not None and self._route(bundle.primary.destination) == next_hop:
                self._retransmit(record, "contact", now, out)
        return out

    def trigger_retransmission(self, trigger: str, tags, now: float) -> NodeOutput:
        """Explicit retransmission triggers (command, forwarding failure,
        gap detection); tags without a live record are ignored with an
        event."""
        out = NodeOutput()
        for tag in sorted(tags, key=lambda t: t.sort_key()):
            record = self.custody.records.get(tag)
            if record is None:
                out.events.append(self._ev(now, "unknown_tag", tag.text(), trigger=trigger))
            else:
                self._retransmit(record, trigger, now, out)
        return out

    # -- pipeline stages --

    def _deliver(self, bundle: Bundle, now: float, out: NodeOutput) -> None:
        block = bundle.block_of_type(CTEB_BLOCK_TYPE)
        if block is not None:
            cteb = decode_cteb(block.type_specific_data)
            tag = cteb.tag(bundle.primary)
            if self.custody.is_duplicate(tag):
                result = self.custody.queue_duplicate(cteb, bundle, now)
                out.events.append(
                    self._ev(now, "custody_dup", tag.text(), bundle=bundle.primary.identity())
                )
                self._after_disposition(tag, 2, result, now, out)
                return  # not re-delivered
            result = self.custody.accept_at_destination(bundle, cteb, now)
            out.events.append(
                self._ev(
                    now,
                    "custody_accept_final",
                    tag.text(),
                    bundle=bundle.primary.identity(),
                )
            )
            self._after_disposition(tag, 1, result, now, out)
        out.events.append(
            self._ev(
                now,
                "deliver",
                _bundle_tag_text(bundle),
                bundle=bundle.primary.identity(),
                client=bundle.primary.destination,
            )
        )
        self._record_reports(bundle, ReportReason.DELIVERY, now, out)

    def _forward_pipeline(self, bundle: Bundle, now: float, out: NodeOutput) -> None:
        outgoing = bundle
        block = bundle.block_of_type(CTEB_BLOCK_TYPE)
        if block is not None:
            cteb = decode_cteb(block.type_specific_data)
            tag = cteb.tag(bundle.primary)
            identity = bundle.primary.identity()
            if self.custody.is_duplicate(tag):
                result = self.custody.queue_duplicate(cteb, bundle, now)
                out.events.append(self._ev(now, "custody_dup", tag.text(), bundle=identity))
                self._after_disposition(tag, 2, result, now, out)
                return  # already under custody here once; drop this copy
            # No route or no room count as resource refusals (drop).
            decision = CustodyDecision.REFUSE_DROP
            store_full = False
            key = None
            if self._route(bundle.primary.destination) is not None:
                try:
                    key = self.store.put(
                        bundle, {RetentionConstraint.COMPRESSED_CUSTODY_PENDING}
                    )
                except StoreFull:
                    store_full = True
                if key is not None:
                    decision = evaluate_custody(
                        self.config.mib.custody_policy, bundle, cteb
                    )
            if decision == CustodyDecision.ACCEPT:
                outgoing, new_tag, result = self.custody.accept_custody(bundle, cteb, now)
                record = self.custody.records[new_tag]
                out.events.append(
                    self._ev(
                        now,
                        "custody_accept",
                        new_tag.text(),
                        bundle=identity,
                        prev=tag.text(),
                        deadline=f"{record.retransmission_deadline:.6f}",
                    )
                )
                out.timers.append(record.retransmission_deadline)
                self._after_disposition(tag, 1, result, now, out)
            else:
                result = self.custody.refuse_custody(bundle, cteb, decision, now)
                mode = "drop" if decision == CustodyDecision.REFUSE_DROP else "forward"
                out.events.append(
                    self._ev(
                        now,
                        "custody_refuse",
                        tag.text(),
                        bundle=identity,
                        mode=mode,
                        store_full=1 if store_full else None,
                    )
                )
                code = -1 if decision == CustodyDecision.REFUSE_DROP else -2
                self._after_disposition(tag, code, result, now, out)
                if key is not None:
                    self.store.remove_constraint(
                        key, RetentionConstraint.COMPRESSED_CUSTODY_PENDING
                    )
                if decision == CustodyDecision.REFUSE_DROP:
                    self._delete_bundle(bundle, "custody_refused", now, out)
                    return
                # refuse-forward: the CTEB stays untouched, pass it on
        self._emit_bundle(outgoing, now, out)

    def _dispatch_admin(self, bundle: Bundle, now: float, out: NodeOutput) -> None:
        payload = bundle.payload.type_specific_data
        try:
            record = cbor.decode(payload)
            record_type = record[0] if isinstance(record, list) and record else None
        except CborDecodeError:
            record_type = None
        source = bundle.primary.source
        try:
            if record_type == CRS_RECORD_TYPE:
                parsed = parse_crs(payload, self.admin_eid, self.config.mib.sequence_max)
                out.events.append(
                    self._ev(now, "crs_recv", src=source, codes=_code_counts(parsed))
                )
                if self.crs_handler is not None:
                    self.crs_handler(self, parsed, now, out)
            elif record_type == CCS_RECORD_TYPE:
                parsed = parse_ccs(payload, self.admin_eid, self.config.mib.sequence_max)
                out.events.append(
                    self._ev(now, "ccs_recv", src=source, codes=_code_counts(parsed))
                )
                self._apply_ccs(parsed, now, out)
            else:
                out.events.append(self._ev(now, "admin_unknown", type=record_type))
        except Bp7Error as exc:
            out.events.append(self._ev(now, "malformed", error=type(exc).__name__))

    def _apply_ccs(self, parsed, now: float, out: NodeOutput) -> None:
        emitted: set[str] = set()
        for action in self.custody.process_ccs(parsed, now):
            tag_text = action.tag.text()
            if action.kind in ("release", "release_dup"):
                out.events.append(
                    self._ev(
                        now,
                        "custody_release",
                        tag_text,
                        bundle=action.record.store_key,
                        code=action.code,
                    )
                )
                if action.kind == "release_dup":
                    out.events.append(
                        self._ev(
                            now,
                            "timer_adapt",
                            tag_text,
                            backoff="on" if self.custody.backoff_enabled else "off",
                            scale=f"{self.custody.timer_scale:g}",
                        )
                    )
            elif action.kind == "retransmit":
                # deadline/count were already advanced by the manager
                bundle = self.store.get(action.record.store_key)
                out.events.append(
                    self._ev(
                        now,
                        "retransmit",
                        tag_text,
                        bundle=action.record.store_key,
                        trigger="ccs_refusal",
                        count=action.record.retransmit_count,
                    )
                )
                out.timers.append(action.record.retransmission_deadline)
                emitted.add(action.record.store_key)
                if bundle is not None:
                    self._emit_bundle(bundle, now, out, report_forwarding=False)
                    self._record_reports(bundle, ReportReason.FORWARDING, now, out)
            elif action.kind == "reset":
                out.events.append(
                    self._ev(
                        now,
                        "timer_reset",
                        tag_text,
                        deadline=f"{action.record.retransmission_deadline:.6f}",
                    )
                )
                out.timers.append(action.record.retransmission_deadline)
            elif action.kind == "unknown":
                out.events.append(self._ev(now, "unknown_tag", tag_text, code=action.code))
            else:
                out.events.append(self._ev(now, "reserved_code", tag_text, code=action.code))
        if self.config.mib.gap_retransmit:
            for record in self.custody.gap_candidates():
                if record.store_key not in emitted:
                    self._retransmit(record, "gap", now, out)

    def _retransmit(self, record: CustodyRecord, trigger: str, now, out) -> None:
        bundle = self.store.get(record.store_key)
        if bundle is None:
            self.custody.drop_record(record)
            out.events.append(self._ev(now, "unknown_tag", record.tag.text(), trigger=trigger))
            return
        self.custody.mark_retransmitted(record, now)
        out.events.append(
            self._ev(
                now,
                "retransmit",
                record.tag.text(),
                bundle=record.store_key,
                trigger=trigger,
                count=record.retransmit_count,
            )
        )
        out.timers.append(record.retransmission_deadline)
        self._emit_bundle(bundle, now, out, report_forwarding=False)
        self._record_reports(bundle, ReportReason.FORWARDING, now, out)

    # -- introspection --

    def check_store_accounting(self) -> bool:
        """Stored ACCEPTED bundles must equal live custody records."""
        accepted = self.store.constrained_count(
            RetentionConstraint.COMPRESSED_CUSTODY_ACCEPTED
        )
        return accepted == len(self.custody.records)

    def state_dump(self) -> str:
        lines = [f"node {self.name} ({self.admin_eid})"]
        lines.append("  counters:")
        for scope, value in sorted(
            self.counters.snapshot().items(), key=lambda kv: kv[0].text()
        ):
            lines.append(f"    {scope.text()} next={value}")
        lines.append("  store:")
        for key in sorted(self.store.entries):
            entry = self.store.entries[key]
            names = ",".join(sorted(c.value for c in entry.constraints))
            lines.append(f"    {key} constraints={names} expiry={entry.expiry:.6f}")
        lines.append("  custody:")
        for tag in sorted(self.custody.records, key=lambda t: t.sort_key()):
            record = self.custody.records[tag]
            lines.append(
                f"    {tag.text()} deadline={record.retransmission_deadline:.6f}"
                f" retransmits={record.retransmit_count}"
            )
        lines.append("  drafts:")
        for label, table in (("crs", self.crs_drafts), ("ccs", self.ccs_drafts)):
            for dest in sorted(table.drafts, key=str):
                draft = table.drafts[dest]
                codes = ",".join(
                    f"{code}:{len(tags)}" for code, tags in sorted(draft.entries.items())
                )
                lines.append(
                    f"    {label} dest={dest} created={draft.created_at:.6f} {codes}"
                )
        return "\n".join(lines) + "\n"


def _code_counts(parsed: dict) -> str:
    return ",".join(f"{code}:{len(tags)}" for code, tags in sorted(parsed.items()))
