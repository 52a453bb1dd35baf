"""Per-turn protocol trace, serialised as JSON lines."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

# Traffic categories. Server-to-server bytes are counted on both the sending
# and the receiving side, as in the per-client cost formula.
C2S_HASH = "client_to_server_hash"
C2S_PARAMS = "client_to_server_initial_params"
S2C_AGG = "server_to_client_aggregate"
C2S_MODEL = "client_to_server_model"
S2C_HASH = "server_to_client_hash"
S2S_OUT = "server_to_server_out"
S2S_IN = "server_to_server_in"
CATEGORIES = (C2S_HASH, C2S_PARAMS, S2C_AGG, C2S_MODEL, S2C_HASH, S2S_OUT, S2S_IN)


@dataclass
class TraceEvent:
    round: int
    turn: int
    client: int
    server: int
    first_join: bool
    resent: bool
    available: list[tuple[str, int, float]]  # (hash, creator, similarity), ranked
    selected: list[tuple[str, int]]  # (hash, creator)
    new_hash: str
    timestamp: int
    bytes_moved: dict[str, int] = field(default_factory=dict)

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_moved.values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        try:
            return cls(
                round=int(d["round"]), turn=int(d["turn"]), client=int(d["client"]),
                server=int(d["server"]), first_join=bool(d["first_join"]), resent=bool(d["resent"]),
                available=[(str(h), int(c), float(s)) for h, c, s in d["available"]],
                selected=[(str(h), int(c)) for h, c in d["selected"]],
                new_hash=str(d["new_hash"]), timestamp=int(d["timestamp"]),
                bytes_moved={str(k): int(v) for k, v in d["bytes_moved"].items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed trace event: {exc!r}") from None
