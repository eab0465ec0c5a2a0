from __future__ import annotations

from dataclasses import dataclass, field

ELEMENT_BITS = 64


@dataclass
class RoundStats:
    """Traffic of one protocol invocation, payload bytes summed over parties."""

    protocol_name: str
    rounds: int = 0
    bytes_total: int = 0
    element_bits: int = ELEMENT_BITS

    @property
    def bits_total(self) -> int:
        return self.bytes_total * 8

    @classmethod
    def merge(cls, per_party: list["RoundStats"]) -> "RoundStats":
        """Combine the three parties' views of the same invocation."""
        names = {s.protocol_name for s in per_party}
        if len(names) != 1:
            raise ValueError(f"cannot merge stats of different protocols {names}")
        return cls(per_party[0].protocol_name,
                   rounds=max(s.rounds for s in per_party),
                   bytes_total=sum(s.bytes_total for s in per_party))


@dataclass
class StatsTotals:
    rounds: int = 0
    bytes_total: int = 0
    invocations: int = 0
    by_protocol: dict[str, int] = field(default_factory=dict)

    def add(self, st: RoundStats) -> None:
        self.rounds += st.rounds
        self.bytes_total += st.bytes_total
        self.invocations += 1
        self.by_protocol[st.protocol_name] = self.by_protocol.get(st.protocol_name, 0) + 1
