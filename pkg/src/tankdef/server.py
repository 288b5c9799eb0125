"""Live session service.

One simulation thread advances the environment at a fixed decision-step
cadence through the MTS runtime; WebSocket clients join as spectator,
human player (controls one tank) or editor (issues goal edits). Client
input uses latest-wins buffering within a decision window; a client
that stops reading is dropped once its outgoing queue fills, without
stalling the simulation.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

from websockets.sync.server import serve as ws_serve

from . import protocol
from .engine import EngineConfig, Status, load_stage
from .goalmap import GoalMapError
from .mts import EditCommand, MtsError, MtsRuntime, StrategyConfig, UnknownGroup
from .nn import DualStreamNet
from .observation import ObsConfig, ObservationPipeline, PALETTE, repeat_and_observe

ROLES = ("spectator", "human", "editor")
OUTGOING_QUEUE_LIMIT = 64


class ServerError(Exception):
    pass


@dataclass
class Client:
    client_id: int
    role: str
    agent_id: Optional[str] = None
    seq: int = 0
    outgoing: "queue.Queue[str]" = field(
        default_factory=lambda: queue.Queue(maxsize=OUTGOING_QUEUE_LIMIT)
    )
    dropped: bool = False

    def send(self, msg: dict) -> None:
        """Queue a message; mark the client dropped if it stopped reading."""
        self.seq += 1
        msg = dict(msg)
        msg["seq"] = self.seq
        try:
            self.outgoing.put_nowait(protocol.encode(msg))
        except queue.Full:
            self.dropped = True


class Session:
    """Owns the environment, the MTS runtime and the connected clients."""

    def __init__(
        self,
        stage_text: str,
        engine_cfg: EngineConfig,
        obs_cfg: ObsConfig,
        strategy: StrategyConfig,
        networks: Dict[str, DualStreamNet],
        seed: int = 0,
        restart_delay: float = 1.0,
    ):
        self.stage_text = stage_text
        self.engine_cfg = engine_cfg
        self.obs_cfg = obs_cfg
        self.seed = seed
        self.restart_delay = restart_delay
        self.runtime = MtsRuntime(strategy, networks, obs_cfg,
                                  cell_px=engine_cfg.cell_px)
        self.clients: Dict[int, Client] = {}
        self._clients_lock = threading.Lock()
        self._next_client_id = 0
        self.episode = 0
        self._restart_at: Optional[float] = None
        self._reset()

    def _reset(self) -> None:
        self.state = load_stage(
            self.stage_text, self.engine_cfg, seed=self.seed + self.episode
        )
        self.pipeline = ObservationPipeline(
            self.obs_cfg, sorted(t.agent_id for t in self.state.players())
        )
        self.obs = self.pipeline.observe(self.state)
        self.last_metas = {}
        self.episode += 1

    # -- client management ------------------------------------------------

    def join(self, role: str, agent_id: Optional[str]) -> Client:
        if role not in ROLES:
            raise ServerError(f"unknown role {role!r}")
        with self._clients_lock:
            if role == "human":
                players = {t.agent_id for t in self.state.players()}
                if agent_id not in players:
                    raise ServerError(f"unknown agent {agent_id!r}")
                taken = {
                    c.agent_id for c in self.clients.values()
                    if c.role == "human" and not c.dropped
                }
                if agent_id in taken:
                    raise ServerError("slot_taken")
                self._set_human_mode(agent_id)
            client = Client(client_id=self._next_client_id, role=role,
                            agent_id=agent_id)
            self._next_client_id += 1
            self.clients[client.client_id] = client
        return client

    def _set_human_mode(self, agent_id: str) -> None:
        for group in self.runtime.config.groups:
            if group.members == [agent_id]:
                self.runtime.apply_edit(EditCommand(
                    kind="set_control_mode", group_id=group.group_id,
                    mode="human",
                ))
                return
        # Agent shares a group; human control requires a dedicated group.
        raise ServerError(
            f"agent {agent_id!r} is not in a single-member group"
        )

    def leave(self, client: Client) -> None:
        with self._clients_lock:
            self.clients.pop(client.client_id, None)

    # -- message handling -------------------------------------------------

    def handle_message(self, client: Client, msg: dict) -> None:
        kind = msg.get("type")
        if kind == "human_action":
            if client.role != "human":
                client.send(protocol.error("not_a_player",
                                           "only human players may act"))
                return
            if msg.get("agent_id") != client.agent_id:
                client.send(protocol.error("unknown_agent",
                                           "act only for your own tank"))
                return
            try:
                action = protocol.parse_action(msg.get("action", ""))
            except protocol.ProtocolError as e:
                client.send(protocol.error("malformed_message", str(e)))
                return
            self.runtime.buffer_human_action(client.agent_id, action)
        elif kind == "goal_edit":
            if client.role != "editor":
                client.send(protocol.error("protocol",
                                           "only editors may edit goals"))
                return
            try:
                ack = self.runtime.apply_edit(
                    EditCommand.from_dict(msg.get("edit") or {})
                )
            except UnknownGroup as e:
                client.send(protocol.error("unknown_group", str(e)))
                return
            except (MtsError, GoalMapError, TypeError) as e:
                client.send(protocol.error("malformed_message", str(e)))
                return
            client.send({"type": "ack", "ack": ack})
        else:
            client.send(protocol.error("malformed_message",
                                       f"unexpected message type {kind!r}"))

    # -- simulation -------------------------------------------------------

    def step_once(self) -> None:
        """Advance one decision step and broadcast the resulting state."""
        if self.state.status != Status.RUNNING:
            if self._restart_at is None:
                self._restart_at = time.monotonic() + self.restart_delay
            elif time.monotonic() >= self._restart_at:
                self._restart_at = None
                self._reset()
                self.broadcast_state()
            return
        decision = self.runtime.decide(self.state, self.obs, mode="eval")
        self.last_metas = decision.metas
        self.obs, _, _, _ = repeat_and_observe(
            self.state, decision.actions, self.pipeline
        )
        self.broadcast_state()

    def broadcast_state(self) -> None:
        msg = protocol.state_update(self.state, self.last_metas,
                                    episode=self.episode)
        with self._clients_lock:
            for client in self.clients.values():
                if not client.dropped:
                    client.send(msg)

    def hello_for(self, client: Client) -> dict:
        return protocol.server_hello(
            self.state.width, self.state.height, self.engine_cfg.cell_px,
            PALETTE, client.role, client.agent_id,
        )


class BridgeServer:
    """WebSocket front of a Session plus the fixed-rate simulation loop."""

    def __init__(self, session: Session, host: str = "127.0.0.1",
                 port: int = 8765, tick_rate: float = 10.0):
        self.session = session
        self.host = host
        self.port = port
        self.tick_rate = tick_rate
        self._stop = threading.Event()
        self._server = None
        self._threads = []

    # one reader (handler) + one writer thread per client
    def _handler(self, ws) -> None:
        try:
            first = protocol.decode(ws.recv())
        except (protocol.ProtocolError, Exception):
            ws.close()
            return
        if first.get("type") != "join":
            ws.send(protocol.encode(
                dict(protocol.error("protocol", "expected join"), seq=1)
            ))
            ws.close()
            return
        try:
            client = self.session.join(first.get("role", "spectator"),
                                       first.get("agent_id"))
        except ServerError as e:
            code = "slot_taken" if "slot_taken" in str(e) else "protocol"
            ws.send(protocol.encode(
                dict(protocol.error(code, str(e)), seq=1)
            ))
            ws.close()
            return

        client.send(self.session.hello_for(client))
        self.session.broadcast_state()

        writer = threading.Thread(
            target=self._writer, args=(ws, client), daemon=True
        )
        writer.start()
        try:
            while not self._stop.is_set():
                try:
                    raw = ws.recv(timeout=0.5)
                except TimeoutError:
                    if client.dropped:
                        break
                    continue
                try:
                    msg = protocol.decode(raw)
                except protocol.ProtocolError as e:
                    client.send(protocol.error("malformed_message", str(e)))
                    continue
                self.session.handle_message(client, msg)
        except Exception:
            pass
        finally:
            client.dropped = True
            self.session.leave(client)
            try:
                ws.close()
            except Exception:
                pass

    def _writer(self, ws, client: Client) -> None:
        while not self._stop.is_set() and not client.dropped:
            try:
                text = client.outgoing.get(timeout=0.5)
            except queue.Empty:
                continue
            try:
                ws.send(text)
            except Exception:
                client.dropped = True
                return

    def _sim_loop(self) -> None:
        interval = 1.0 / self.tick_rate
        next_t = time.monotonic()
        while not self._stop.is_set():
            self.session.step_once()
            next_t += interval
            delay = next_t - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_t = time.monotonic()

    def start(self) -> None:
        try:
            self._server = ws_serve(self._handler, self.host, self.port)
        except OSError as e:
            raise ServerError(f"cannot bind {self.host}:{self.port}: {e}") from e
        self._threads = [
            threading.Thread(target=self._server.serve_forever, daemon=True),
            threading.Thread(target=self._sim_loop, daemon=True),
        ]
        for t in self._threads:
            t.start()

    def stop(self) -> None:
        self._stop.set()
        if self._server is not None:
            self._server.shutdown()
        for t in self._threads:
            t.join(timeout=2)

    def run_forever(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
