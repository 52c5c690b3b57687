"""Line-oriented event log shared by the node agent and the simulator.

One record per line: time<TAB>node<TAB>event<TAB>tag<TAB>detail, with
the time printed at the 1 us event granularity. Logs round-trip through
text so metrics can be recomputed from a saved file.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Event:
    time: float
    node: str
    kind: str
    tag: str = "-"
    detail: str = ""

    def line(self) -> str:
        return f"{self.time:.6f}\t{self.node}\t{self.kind}\t{self.tag}\t{self.detail}"

    @classmethod
    def from_line(cls, line: str) -> "Event":
        time_text, node, kind, tag, detail = line.rstrip("\n").split("\t", 4)
        return cls(float(time_text), node, kind, tag, detail)

    def fields(self) -> dict[str, str]:
        """The detail string parsed back into key=value pairs."""
        out = {}
        for chunk in self.detail.split():
            if "=" in chunk:
                key, value = chunk.split("=", 1)
                out[key] = value
        return out


def detail_text(**fields) -> str:
    return " ".join(f"{k}={v}" for k, v in fields.items() if v is not None)


class EventLog:
    def __init__(self, events: list[Event] | None = None):
        self.events: list[Event] = events or []

    def append(self, event: Event) -> None:
        self.events.append(event)

    def extend(self, events) -> None:
        self.events.extend(events)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def text(self) -> str:
        return "".join(e.line() + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.text())

    @classmethod
    def parse(cls, text: str) -> "EventLog":
        return cls([Event.from_line(line) for line in text.splitlines() if line])

    @classmethod
    def load(cls, path) -> "EventLog":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.parse(handle.read())
