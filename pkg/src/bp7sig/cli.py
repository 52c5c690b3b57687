"""Command-line interface: run scenarios, decode wire artifacts, report.

Exit codes: 0 success, 1 protocol/configuration error, 2 usage error.
BP7_LOG_LEVEL (error|info|debug|trace) controls diagnostic logging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from . import cbor
from .bundle import CrcType, PrimaryBlockData, decode_bundle, make_bundle
from .custody import CCS_RECORD_TYPE, CtebData, decode_cteb, encode_cteb
from .eid import EndpointId, decode_eid, encode_eid
from .errors import Bp7Error, ConfigError, MalformedSignal
from .eventlog import EventLog
from .reporting import (
    CRS_RECORD_TYPE,
    BundleSequence,
    CrebData,
    decode_creb,
    encode_creb,
    reason_mask,
    _sequence_from_item,
    _sequence_item,
)
from .identity import SequenceScope
from .scenarios import BUILTIN_SCENARIOS, load_scenario
from .sim import Simulation, run, summarize

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG, "trace": 5}


def _configure_logging() -> None:
    level = os.environ.get("BP7_LOG_LEVEL", "error").lower()
    if level not in _LOG_LEVELS:
        level = "error"
    logging.addLevelName(5, "TRACE")
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(name)s %(levelname)s %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bp7sig")
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="run a scenario and write events/metrics")
    p_run.add_argument("scenario", nargs="?", help="scenario file (YAML)")
    p_run.add_argument("--builtin", choices=sorted(BUILTIN_SCENARIOS))
    p_run.add_argument("--seed", type=int, default=1)
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--format", choices=["text", "kv"], default="text")
    p_run.add_argument("--dump-state", action="store_true", help="write node_state.txt")
    p_run.set_defaults(func=_cmd_run)

    p_decode = sub.add_parser("decode", help="decode a wire artifact to a field table")
    p_decode.add_argument("kind", choices=["bundle", "creb", "cteb", "crs", "ccs", "eid"])
    p_decode.add_argument("hex", nargs="?", help="hex bytes")
    p_decode.add_argument("--file", help="read raw bytes from a file instead")
    p_decode.set_defaults(func=_cmd_decode)

    p_encode = sub.add_parser("encode", help="encode a structured description to hex")
    p_encode.add_argument("kind", choices=["bundle", "creb", "cteb", "crs", "ccs", "eid"])
    p_encode.add_argument("--input", help="YAML description (default: stdin)")
    p_encode.set_defaults(func=_cmd_encode)

    p_report = sub.add_parser("report", help="recompute metrics from an event log")
    p_report.add_argument("log", help="events.log path")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    _configure_logging()
    try:
        return args.func(args)
    except Bp7Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _cmd_run(args) -> int:
    if bool(args.scenario) == bool(args.builtin):
        print("error: give a scenario file or --builtin, not both", file=sys.stderr)
        return 2
    if args.builtin:
        scenario = BUILTIN_SCENARIOS[args.builtin]()
    else:
        scenario = load_scenario(args.scenario)
    sim = Simulation(scenario, args.seed)
    log = sim.run()
    metrics = summarize(log)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.write(out_dir / "events.log")
    if args.format == "kv":
        metrics_text = metrics.kv()
    else:
        metrics_text = metrics.table() + "\n" + metrics.kv()
    (out_dir / "metrics.txt").write_text(metrics_text, encoding="utf-8")
    if args.dump_state:
        (out_dir / "node_state.txt").write_text(sim.state_dumps(), encoding="utf-8")
    print(f"scenario {scenario.name}: {len(log)} events -> {out_dir}")
    print(metrics_text, end="")
    return 0


def _read_artifact(args) -> bytes:
    if args.file:
        return Path(args.file).read_bytes()
    if not args.hex:
        raise ConfigError("give hex bytes or --file")
    try:
        return bytes.fromhex(args.hex)
    except ValueError as exc:
        raise ConfigError(f"not valid hex: {exc}") from exc


def _scope_text(scope: SequenceScope) -> str:
    return str(scope.destination) if scope.is_per_destination else str(scope.explicit_id)


def _print_signal(data: bytes, expected_type: int, label: str) -> None:
    item = cbor.decode(data)
    if not isinstance(item, list) or len(item) != 2 or item[0] != expected_type:
        raise MalformedSignal(f"not a {label} record")
    print(f"{label} (record type {item[0]})")
    if not isinstance(item[1], dict):
        raise MalformedSignal("record content is not a map")
    print(f"{'code':>6}  {'first':>8}  {'length':>8}  {'scope':<16}  block-source")
    for code in sorted(item[1]):
        for raw_seq in item[1][code]:
            seq = _sequence_from_item(raw_seq)
            source = str(seq.block_source) if seq.block_source else "(receiver)"
            print(
                f"{code:>6}  {seq.first:>8}  {seq.length:>8}  "
                f"{_scope_text(seq.scope):<16}  {source}"
            )


def _cmd_decode(args) -> int:
    data = _read_artifact(args)
    if args.kind == "eid":
        print(decode_eid(data))
    elif args.kind == "creb":
        creb = decode_creb(data)
        print("compressed reporting block")
        print(f"  sequence_number  {creb.sequence_number}")
        print(f"  sequence_id      {creb.sequence_id if creb.sequence_id is not None else '(absent -> 0)'}")
        mask = creb.report_types
        print(f"  report_types     {mask if mask is not None else '(absent -> none)'}")
        print(f"  block_source     {creb.block_source or '(absent -> bundle source)'}")
        print(f"  report_endpoint  {creb.report_endpoint or '(absent)'}")
    elif args.kind == "cteb":
        cteb = decode_cteb(data)
        print("custody transfer block")
        print(f"  sequence_number  {cteb.sequence_number}")
        print(f"  sequence_id      {cteb.sequence_id}")
        print(f"  block_source     {cteb.block_source}")
    elif args.kind == "crs":
        _print_signal(data, CRS_RECORD_TYPE, "compressed reporting signal")
    elif args.kind == "ccs":
        _print_signal(data, CCS_RECORD_TYPE, "compressed custody signal")
    else:
        bundle = decode_bundle(data)
        p = bundle.primary
        print("bundle")
        print(f"  destination  {p.destination}")
        print(f"  source       {p.source}")
        print(f"  report_to    {p.report_to}")
        print(f"  created      {p.creation_time} seq {p.creation_sequence}")
        print(f"  lifetime_ms  {p.lifetime}")
        print(f"  flags        {p.processing_flags}")
        print(f"  crc          {p.crc_type.name.lower()}")
        for block in bundle.blocks:
            print(
                f"  block type={block.block_type_code} number={block.block_number}"
                f" crc={block.crc_type.name.lower()} bytes={len(block.type_specific_data)}"
            )
    return 0


def _load_description(args):
    if args.input:
        text = Path(args.input).read_text(encoding="utf-8")
    else:
        text = sys.stdin.read()
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc


_REASONS = {"reception": 0, "forwarding": 1, "delivery": 2, "deletion": 3}


def _described_scope(value) -> SequenceScope:
    if isinstance(value, int):
        return SequenceScope.explicit(value)
    return SequenceScope.for_destination(EndpointId.parse(value))


def _encode_signal(doc, record_type: int) -> bytes:
    content = {}
    for code in sorted(doc):
        items = []
        for row in doc[code]:
            first, length, scope = row[0], row[1], _described_scope(row[2])
            source = EndpointId.parse(row[3]) if len(row) > 3 else None
            seq = BundleSequence(first, length, scope, source)
            items.append(_sequence_item(seq, omit_source=source is None))
        content[int(code)] = items
    return cbor.encode([record_type, content])


def _cmd_encode(args) -> int:
    doc = _load_description(args)
    if args.kind == "eid":
        eid = EndpointId.parse(doc if isinstance(doc, str) else doc["eid"])
        print(encode_eid(eid).hex())
        return 0
    if not isinstance(doc, dict):
        raise ConfigError("description must be a mapping")
    if args.kind == "creb":
        reports = doc.get("reports")
        mask = doc.get("report_types")
        if mask is None and reports is not None:
            mask = reason_mask(_REASONS[name] for name in reports)
        creb = CrebData(
            sequence_number=int(doc["sequence_number"]),
            sequence_id=doc.get("sequence_id"),
            report_types=mask,
            block_source=(
                EndpointId.parse(doc["block_source"]) if doc.get("block_source") else None
            ),
            report_endpoint=(
                EndpointId.parse(doc["report_endpoint"])
                if doc.get("report_endpoint")
                else None
            ),
        )
        print(encode_creb(creb).hex())
    elif args.kind == "cteb":
        cteb = CtebData(
            int(doc["sequence_number"]),
            int(doc.get("sequence_id", 0)),
            EndpointId.parse(doc["block_source"]),
        )
        print(encode_cteb(cteb).hex())
    elif args.kind == "crs":
        print(_encode_signal(doc, CRS_RECORD_TYPE).hex())
    elif args.kind == "ccs":
        print(_encode_signal(doc, CCS_RECORD_TYPE).hex())
    else:
        primary = PrimaryBlockData(
            destination=EndpointId.parse(doc["destination"]),
            source=EndpointId.parse(doc["source"]),
            report_to=EndpointId.parse(doc.get("report_to", doc["source"])),
            creation_time=int(doc.get("creation_time", 0)),
            creation_sequence=int(doc.get("creation_sequence", 0)),
            lifetime=int(doc.get("lifetime", 3600000)),
            processing_flags=int(doc.get("flags", 0)),
            crc_type=CrcType[doc.get("crc", "crc32c").upper()],
        )
        if "payload_hex" in doc:
            payload = bytes.fromhex(doc["payload_hex"])
        else:
            payload = str(doc.get("payload", "")).encode()
        from .bundle import CanonicalBlock, encode_bundle

        extensions = [
            CanonicalBlock(int(b["type"]), 0, bytes.fromhex(b["data_hex"]))
            for b in doc.get("blocks", [])
        ]
        print(encode_bundle(make_bundle(primary, extensions, payload)).hex())
    return 0


def _cmd_report(args) -> int:
    log = EventLog.load(args.log)
    metrics = summarize(log)
    print(metrics.table())
    print(metrics.kv(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
