"""Built-in experiment scenarios and the YAML scenario loader.

The two golden configurations reproduce the demonstration runs: a lunar
relay carrying 50 delivery-reported bundles with one scripted loss, and
an Earth-observation custody exchange where the ground station accepts,
drops or forwards per a fixed script.
"""

from __future__ import annotations

import yaml

from .custody import AlwaysAccept, CustodyDecision, ProbabilisticPolicy, ScriptedPolicy
from .eid import EndpointId
from .errors import ConfigError
from .node import Mib, NodeConfig
from .reporting import ReportReason
from .sim import Link, LossModel, Scenario, TrafficSpec


def lunar_scenario() -> Scenario:
    """user1 (ipn:31) -> lgw (ipn:220) -> rover1 (ipn:21), 50 bundles with
    delivery reporting; the relay-to-rover link drops exactly the bundle
    carrying sequence number 17, standing in for random 1% loss."""
    mib = Mib(crs_max_bundles=100, crs_max_pending=10.0)
    nodes = [
        NodeConfig("user1", 31, routes={21: 220}, mib=mib),
        NodeConfig("lgw", 220, routes={21: 21, 31: 31}, mib=mib),
        NodeConfig("rover1", 21, routes={31: 220}, mib=mib),
    ]
    drop17 = LossModel(kind="scripted", drop_tags=("dst:ipn:21.1/17/ipn:31.0",))
    links = [
        Link(31, 220, 0.01),
        Link(220, 31, 0.01),
        Link(220, 21, 1.3, loss=drop17),
        Link(21, 220, 1.3),
    ]
    traffic = [
        TrafficSpec(
            time=0.0,
            source=EndpointId.parse("ipn:31.1"),
            dest=EndpointId.parse("ipn:21.1"),
            count=50,
            interval=0.01,
            reports=(ReportReason.DELIVERY,),
        )
    ]
    return Scenario("lunar", nodes, links, traffic, duration=20.0)


def lunar_probabilistic_scenario(loss_rate: float = 0.01) -> Scenario:
    """Same topology with true random loss for statistical runs."""
    scenario = lunar_scenario()
    for link in scenario.links:
        if link.source == 220 and link.dest == 21:
            link.loss = LossModel(kind="probabilistic", rate=loss_rate)
    scenario.name = "lunar-lossy"
    return scenario


_GS2_SCRIPT = {
    2: [CustodyDecision.REFUSE_DROP, CustodyDecision.REFUSE_FORWARD],
    3: [CustodyDecision.REFUSE_FORWARD],
    4: [CustodyDecision.REFUSE_DROP, CustodyDecision.REFUSE_FORWARD],
}


def eo_scenario() -> Scenario:
    """PCC (ipn:10) -> GS2 (ipn:20) -> EOSAT (ipn:50), 5 custody bundles.

    GS2's script realizes the demonstration outcome: accept {0,1}, drop
    {2,4}, forward 3 without custody; the retransmitted {2,4} are
    forwarded without custody as well.
    """

    def mib(policy=None) -> Mib:
        return Mib(
            ccs_max_bundles=5,
            ccs_max_pending=15.0,
            retransmission_timer=20.0,
            custody_policy=policy or AlwaysAccept(),
        )

    nodes = [
        NodeConfig("pcc", 10, routes={50: 20}, mib=mib()),
        NodeConfig("gs2", 20, routes={50: 50, 10: 10}, mib=mib(ScriptedPolicy(_GS2_SCRIPT))),
        NodeConfig("eosat", 50, routes={10: 20, 20: 20}, mib=mib()),
    ]
    links = [
        Link(10, 20, 0.05),
        Link(20, 10, 0.05),
        Link(20, 50, 0.9),
        Link(50, 20, 0.9),
    ]
    traffic = [
        TrafficSpec(
            time=0.0,
            source=EndpointId.parse("ipn:10.1"),
            dest=EndpointId.parse("ipn:50.1"),
            count=5,
            interval=0.01,
            custody=True,
        )
    ]
    return Scenario("eo", nodes, links, traffic, duration=30.0)


def eo_probabilistic_scenario(
    count: int = 200,
    loss_rate: float = 0.1,
    policy_seed: int = 0,
    duration: float = 600.0,
    gs2_policy: str = "probabilistic",
) -> Scenario:
    """Lossy custody variant: every link drops a fraction of traffic and
    GS2 draws accept/drop/forward at 50/25/25 (or always accepts)."""
    scenario = eo_scenario()
    scenario.name = "eo-lossy"
    scenario.duration = duration
    for link in scenario.links:
        link.loss = LossModel(kind="probabilistic", rate=loss_rate)
    for cfg in scenario.nodes:
        if cfg.name == "gs2":
            if gs2_policy == "probabilistic":
                cfg.mib.custody_policy = ProbabilisticPolicy(0.5, 0.25, 0.25, policy_seed)
            else:
                cfg.mib.custody_policy = AlwaysAccept()
    scenario.traffic[0].count = count
    return scenario


BUILTIN_SCENARIOS = {
    "lunar": lunar_scenario,
    "eo": eo_scenario,
}


# -- declarative scenario files ------------------------------------------------

_REASON_NAMES = {
    "reception": ReportReason.RECEPTION,
    "forwarding": ReportReason.FORWARDING,
    "delivery": ReportReason.DELIVERY,
    "deletion": ReportReason.DELETION,
}

_DECISION_NAMES = {
    "accept": CustodyDecision.ACCEPT,
    "drop": CustodyDecision.REFUSE_DROP,
    "forward": CustodyDecision.REFUSE_FORWARD,
}


def _policy_from_dict(raw) -> object:
    if raw is None:
        return AlwaysAccept()
    kind = raw.get("kind")
    if kind == "always_accept":
        return AlwaysAccept()
    if kind == "scripted":
        decisions = {
            int(number): [_DECISION_NAMES[d] for d in script]
            for number, script in (raw.get("decisions") or {}).items()
        }
        default = _DECISION_NAMES[raw.get("default", "accept")]
        return ScriptedPolicy(decisions, default)
    if kind == "probabilistic":
        return ProbabilisticPolicy(
            raw.get("accept", 0.5),
            raw.get("drop", 0.25),
            raw.get("forward", 0.25),
            raw.get("seed", 0),
        )
    raise ConfigError(f"unknown custody policy kind {kind!r}")


def _mib_from_dict(raw) -> Mib:
    raw = dict(raw or {})
    policy = _policy_from_dict(raw.pop("custody_policy", None))
    creb_policy = raw.pop("creb_policy", None)
    if creb_policy is not None:
        creb_policy = tuple(_REASON_NAMES[name] for name in creb_policy)
    known = {f for f in Mib.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown MIB fields: {sorted(unknown)}")
    return Mib(custody_policy=policy, creb_policy=creb_policy, **raw)


def _loss_from_dict(raw) -> LossModel:
    if raw is None:
        return LossModel()
    return LossModel(
        kind=raw.get("kind", "none"),
        rate=float(raw.get("rate", 0.0)),
        seed=raw.get("seed"),
        drop_indices=tuple(raw.get("drop_indices", ())),
        drop_tags=tuple(raw.get("drop_tags", ())),
    )


def scenario_from_dict(raw) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must hold a mapping")
    try:
        nodes = [
            NodeConfig(
                name=str(n["name"]),
                node_number=int(n["number"]),
                routes={int(k): int(v) for k, v in (n.get("routes") or {}).items()},
                mib=_mib_from_dict(n.get("mib")),
            )
            for n in raw.get("nodes", [])
        ]
        links = [
            Link(
                source=int(l["from"]),
                dest=int(l["to"]),
                one_way_delay=float(l.get("delay", 0.0)),
                loss=_loss_from_dict(l.get("loss")),
                contact_windows=(
                    [(float(a), float(b)) for a, b in l["windows"]]
                    if l.get("windows") is not None
                    else None
                ),
            )
            for l in raw.get("links", [])
        ]
        traffic = [
            TrafficSpec(
                time=float(t.get("time", 0.0)),
                source=EndpointId.parse(t["source"]),
                dest=EndpointId.parse(t["dest"]),
                count=int(t.get("count", 1)),
                interval=float(t.get("interval", 0.0)),
                reports=(
                    tuple(_REASON_NAMES[name] for name in t["reports"])
                    if t.get("reports") is not None
                    else None
                ),
                custody=bool(t.get("custody", False)),
                creb=bool(t.get("creb", False)),
                report_endpoint=(
                    EndpointId.parse(t["report_endpoint"])
                    if t.get("report_endpoint")
                    else None
                ),
                sequence_id=t.get("sequence_id"),
            )
            for t in raw.get("traffic", [])
        ]
        duration = float(raw["duration"])
        name = str(raw.get("name", "scenario"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario definition: {exc!r}") from exc
    return Scenario(name, nodes, links, traffic, duration)


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario is not valid YAML: {exc}") from exc
    return scenario_from_dict(raw)
