"""Deterministic discrete-event simulator for multi-node scenarios.

A single priority queue keyed by (time, insertion order) drives node
agents connected by unidirectional links with delay, loss models and
contact windows. The same (scenario, seed) always produces the same
event log, byte for byte.
"""

from __future__ import annotations

import copy
import heapq
import random
from dataclasses import dataclass, field

from .eid import EndpointId
from .errors import ConfigError
from .eventlog import Event, EventLog, detail_text
from .node import Emission, Node, NodeConfig, NodeOutput
from .reporting import ReportReason

# Event times are quantized to the simulator granularity of 1 us.
GRANULARITY_DIGITS = 6


def _quantize(t: float) -> float:
    return round(t, GRANULARITY_DIGITS)


@dataclass
class LossModel:
    """none, probabilistic(rate, seed) or scripted drops.

    Scripted drops match either the per-link transmission index
    (0-based, in emission order) or the exact tag text of the bundle's
    reporting/custody identity.
    """

    kind: str = "none"  # none | probabilistic | scripted
    rate: float = 0.0
    seed: int | None = None
    drop_indices: tuple[int, ...] = ()
    drop_tags: tuple[str, ...] = ()


@dataclass
class Link:
    source: int
    dest: int
    one_way_delay: float
    loss: LossModel = field(default_factory=LossModel)
    contact_windows: list[tuple[float, float]] | None = None  # None = always up

    def next_transmit_time(self, t: float) -> float | None:
        """When a transmission requested at t can leave, or None."""
        if self.contact_windows is None:
            return t
        for start, end in self.contact_windows:
            if t < end:
                return max(t, start)
        return None


@dataclass
class TrafficSpec:
    time: float
    source: EndpointId
    dest: EndpointId
    count: int = 1
    interval: float = 0.0
    reports: tuple[ReportReason, ...] | None = None
    custody: bool = False
    creb: bool = False
    report_endpoint: EndpointId | None = None
    sequence_id: int | None = None


@dataclass
class Scenario:
    name: str
    nodes: list[NodeConfig]
    links: list[Link]
    traffic: list[TrafficSpec]
    duration: float


@dataclass
class Metrics:
    sent: int = 0
    delivered: int = 0
    lost_or_dropped: int = 0
    crs_count: int = 0
    ccs_count: int = 0
    per_bundle_signal_count_baseline: int = 0
    last_delivery_time: float | None = None
    final_custody_release_time: float | None = None

    _LABELS = (
        ("sent", "Bundles Sent"),
        ("delivered", "Bundles Delivered"),
        ("lost_or_dropped", "Bundles Lost/Dropped"),
        ("crs_count", "CRS Count"),
        ("ccs_count", "CCS Count"),
        ("per_bundle_signal_count_baseline", "Per-Bundle Report Baseline"),
        ("last_delivery_time", "Last Bundle Delivery Time"),
        ("final_custody_release_time", "Final Custody Release Time"),
    )

    def _format(self, value) -> str:
        if value is None:
            return "n/a"
        if isinstance(value, float):
            return f"{value:.6f}"
        return str(value)

    def table(self) -> str:
        width = max(len(label) for _, label in self._LABELS) + 2
        rows = [
            f"{label:<{width}}{self._format(getattr(self, name))}"
            for name, label in self._LABELS
        ]
        return "\n".join(rows) + "\n"

    def kv(self) -> str:
        rows = [
            f"{name}={self._format(getattr(self, name))}" for name, _ in self._LABELS
        ]
        return "\n".join(rows) + "\n"


def summarize(log: EventLog) -> Metrics:
    """Metrics are a pure function of the event log.

    The per-bundle baseline counts what one-report-per-event status
    reporting (and per-bundle custody signalling) would have sent: one
    administrative record per queued report or disposition entry.
    """
    m = Metrics()
    for event in log:
        fields = None
        if event.kind == "adu_send":
            m.sent += 1
        elif event.kind == "deliver":
            m.delivered += 1
            m.last_delivery_time = event.time
        elif event.kind == "crs_send":
            m.crs_count += 1
        elif event.kind == "ccs_send":
            m.ccs_count += 1
        elif event.kind in ("report_queued", "disposition_queued"):
            m.per_bundle_signal_count_baseline += 1
        elif event.kind == "custody_release":
            m.final_custody_release_time = event.time
        elif event.kind == "link_drop":
            fields = event.fields()
            if fields.get("admin") != "1":
                m.lost_or_dropped += 1
        elif event.kind == "delete":
            fields = event.fields()
            if fields.get("admin") != "1":
                m.lost_or_dropped += 1
    return m


class Simulation:
    def __init__(self, scenario: Scenario, seed: int):
        _validate(scenario)
        # Nodes consume policy state (scripted decisions, policy RNG), so
        # work on a copy: running the same Scenario twice must not differ.
        scenario = copy.deepcopy(scenario)
        self.scenario = scenario
        self.seed = seed
        self.nodes: dict[int, Node] = {
            cfg.node_number: Node(cfg) for cfg in scenario.nodes
        }
        self.links: dict[tuple[int, int], Link] = {
            (link.source, link.dest): link for link in scenario.links
        }
        self._link_rng: dict[tuple[int, int], random.Random] = {}
        self._link_tx_count: dict[tuple[int, int], int] = {}
        for index, link in enumerate(scenario.links):
            key = (link.source, link.dest)
            loss_seed = (
                f"loss:{link.loss.seed}"
                if link.loss.seed is not None
                else f"{seed}:loss:{index}"
            )
            self._link_rng[key] = random.Random(loss_seed)
            self._link_tx_count[key] = 0
        self.log = EventLog()
        self._queue: list = []
        self._order = 0

    def _push(self, time: float, action, payload) -> None:
        heapq.heappush(self._queue, (_quantize(time), self._order, action, payload))
        self._order += 1

    def _node_name(self, number: int) -> str:
        return self.nodes[number].name

    def run(self) -> EventLog:
        for spec in self.scenario.traffic:
            for k in range(spec.count):
                self._push(spec.time + k * spec.interval, "traffic", (spec, k))
        for link in self.scenario.links:
            if link.contact_windows is not None:
                for start, end in link.contact_windows:
                    self._push(start, "contact_up", link)
                    self._push(end, "contact_down", link)
        while self._queue:
            time, _, action, payload = heapq.heappop(self._queue)
            if time > self.scenario.duration:
                break
            if action == "traffic":
                spec, k = payload
                node = self._client_node(spec.source)
                out = node.send_adu(
                    spec.source,
                    spec.dest,
                    f"adu-{k}".encode(),
                    time,
                    reports=spec.reports,
                    custody=spec.custody,
                    creb=spec.creb,
                    report_endpoint=spec.report_endpoint,
                    sequence_id=spec.sequence_id,
                )
                self._absorb(node, out, time)
            elif action == "arrive":
                number, data = payload
                node = self.nodes[number]
                self._absorb(node, node.on_receive(data, time), time)
            elif action == "timer":
                node = self.nodes[payload]
                self._absorb(node, node.on_timer(time), time)
            elif action == "contact_up":
                link = payload
                self.log.append(
                    Event(
                        time,
                        self._node_name(link.source),
                        "contact_up",
                        "-",
                        detail_text(to=link.dest),
                    )
                )
                node = self.nodes[link.source]
                self._absorb(node, node.on_contact_start(link.dest, time), time)
            elif action == "contact_down":
                link = payload
                self.log.append(
                    Event(
                        time,
                        self._node_name(link.source),
                        "contact_down",
                        "-",
                        detail_text(to=link.dest),
                    )
                )
        return self.log

    def _client_node(self, client: EndpointId) -> Node:
        node = self.nodes.get(client.node_number)
        if node is None:
            raise ConfigError(f"no node hosts client {client}")
        return node

    def _absorb(self, node: Node, out: NodeOutput, now: float) -> None:
        self.log.extend(out.events)
        for emission in out.emissions:
            self._transmit(node.config.node_number, emission, now)
        for deadline in out.timers:
            self._push(deadline, "timer", node.config.node_number)

    def _transmit(self, source: int, emission: Emission, now: float) -> None:
        key = (source, emission.next_hop)
        link = self.links.get(key)
        if link is None:
            raise ConfigError(f"no link {source}->{emission.next_hop}")
        index = self._link_tx_count[key]
        self._link_tx_count[key] = index + 1
        departure = link.next_transmit_time(now)
        if departure is None:
            self._drop(source, emission, now, "no_contact", index)
            return
        loss = link.loss
        dropped = False
        if loss.kind == "probabilistic":
            dropped = self._link_rng[key].random() < loss.rate
        elif loss.kind == "scripted":
            dropped = index in loss.drop_indices or emission.tag_text in loss.drop_tags
        if dropped:
            self._drop(source, emission, now, "loss", index)
            return
        self._push(departure + link.one_way_delay, "arrive", (emission.next_hop, emission.data))

    def _drop(self, source, emission: Emission, now, reason: str, index: int) -> None:
        self.log.append(
            Event(
                now,
                self._node_name(source),
                "link_drop",
                emission.tag_text,
                detail_text(
                    to=emission.next_hop,
                    bundle=emission.bundle_id,
                    reason=reason,
                    index=index,
                    admin=1 if emission.admin else None,
                ),
            )
        )

    def state_dumps(self) -> str:
        return "".join(
            self.nodes[number].state_dump() for number in sorted(self.nodes)
        )


def _validate(scenario: Scenario) -> None:
    if scenario.duration <= 0:
        raise ConfigError("duration must be positive")
    numbers = [cfg.node_number for cfg in scenario.nodes]
    if len(set(numbers)) != len(numbers):
        raise ConfigError("node numbers must be unique")
    known = set(numbers)
    for link in scenario.links:
        if link.source not in known or link.dest not in known:
            raise ConfigError(f"link {link.source}->{link.dest} names unknown nodes")
        if link.one_way_delay < 0:
            raise ConfigError("link delay must be non-negative")
        if link.contact_windows is not None:
            for start, end in link.contact_windows:
                if end <= start:
                    raise ConfigError("contact window must end after it starts")
    for spec in scenario.traffic:
        if spec.source.node_number not in known:
            raise ConfigError(f"traffic source {spec.source} has no node")
        if spec.count < 0 or spec.interval < 0:
            raise ConfigError("traffic count/interval must be non-negative")


def run(scenario: Scenario, seed: int) -> tuple[EventLog, Metrics]:
    """Execute the scenario; identical inputs give identical logs."""
    log = Simulation(scenario, seed).run()
    return log, summarize(log)
