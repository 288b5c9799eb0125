"""Wire protocol for the live session service.

Messages are compact JSON objects with a "type" field and a per-client
monotone "seq" number, sent as text frames over a WebSocket (browsers)
or as length-prefixed frames over a raw byte stream (transcripts,
tests). Every state update is self-contained: a client can render the
scene from it without any prior message.
"""

from __future__ import annotations

import json
from typing import Dict, Iterator, List, Optional, Tuple

from .engine import Action, GameState, Status
from .goalmap import TargetMeta

PROTO_VERSION = 1

MESSAGE_TYPES = (
    "join",
    "server_hello",
    "state_update",
    "human_action",
    "goal_edit",
    "error",
    "ack",
)

ERROR_CODES = (
    "slot_taken",
    "not_a_player",
    "unknown_agent",
    "unknown_group",
    "malformed_message",
    "protocol",
)


class ProtocolError(Exception):
    pass


def encode(msg: dict) -> str:
    """Message dict -> canonical JSON text."""
    if msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {msg.get('type')!r}")
    return json.dumps(msg, sort_keys=True, separators=(",", ":"))


def decode(text: str) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"not valid JSON: {e}") from e
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type in {text[:80]!r}")
    return msg


def encode_frame(msg: dict) -> bytes:
    """Length-prefixed frame for raw byte streams: b"<len>\\n<payload>"."""
    payload = encode(msg).encode()
    return str(len(payload)).encode() + b"\n" + payload


def decode_frames(data: bytes) -> Iterator[dict]:
    """Decode a byte stream of length-prefixed frames."""
    pos = 0
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ProtocolError("truncated frame header")
        try:
            length = int(data[pos:nl])
        except ValueError as e:
            raise ProtocolError(f"bad frame length {data[pos:nl]!r}") from e
        start, end = nl + 1, nl + 1 + length
        if end > len(data):
            raise ProtocolError("truncated frame payload")
        yield decode(data[start:end].decode())
        pos = end


# -- message constructors -------------------------------------------------


def server_hello(grid_w: int, grid_h: int, cell_px: int, palette: dict,
                 role: str, agent_id: Optional[str] = None) -> dict:
    return {
        "type": "server_hello",
        "proto_version": PROTO_VERSION,
        "grid": {"width": grid_w, "height": grid_h, "cell_px": cell_px},
        "palette": {k: list(v) for k, v in palette.items()},
        "role": role,
        "agent_id": agent_id,
    }


def state_update(state: GameState, metas: Dict[str, TargetMeta],
                 episode: int = 0) -> dict:
    """Self-contained scene description for one decision step."""
    return {
        "type": "state_update",
        "tick": state.tick,
        "episode": episode,
        "status": state.status.value,
        "grid": ["".join(_TILE_CHARS[v] for v in row)
                 for row in state.grid.tolist()],
        "base": list(state.base),
        "tanks": [
            {
                "id": t.id,
                "side": t.side.value,
                "agent_id": t.agent_id,
                "pos": list(t.pos),
                "facing": int(t.facing),
                "alive": t.alive,
            }
            for t in state.tanks
        ],
        "bullets": [
            {"pos": list(b.pos), "dir": int(b.dir), "owner_side": b.owner_side.value}
            for b in state.bullets
        ],
        "scores": dict(state.agent_scores),
        "resolved_targets": {
            gid: [t.to_dict() for t in meta.resolved]
            for gid, meta in metas.items()
        },
    }


_TILE_CHARS = {0: ".", 1: "s", 2: "#", 3: "~", 4: "B"}


def human_action(agent_id: str, action: Action) -> dict:
    return {"type": "human_action", "agent_id": agent_id,
            "action": action.name.lower()}


def parse_action(name: str) -> Action:
    try:
        return Action[name.upper()]
    except KeyError as e:
        raise ProtocolError(f"unknown action {name!r}") from e


def goal_edit(edit: dict) -> dict:
    return {"type": "goal_edit", "edit": edit}


def error(code: str, text: str) -> dict:
    if code not in ERROR_CODES:
        raise ProtocolError(f"unknown error code {code!r}")
    return {"type": "error", "code": code, "text": text}
