"""Live session service: join rules, message handling, WebSocket loop."""

import json
import queue
import time

import pytest

from tankdef.a3c import Hyperparams, build_networks
from tankdef.config import (
    bundled_stage,
    load_engine_config,
    load_obs_config,
    load_strategy_config,
)
from tankdef.engine import EngineConfig, Status
from tankdef.nn import DualStreamNet
from tankdef.observation import ObsConfig
from tankdef.server import OUTGOING_QUEUE_LIMIT, BridgeServer, ServerError, Session


def desk_session(**kwargs):
    stage = bundled_stage("desk")
    engine_cfg = EngineConfig(max_enemies=2, step_limit=400, cell_px=12)
    obs_cfg = ObsConfig(native_size=(108, 108))
    strategy = load_strategy_config("desk_strategy")
    nets = {
        nid: DualStreamNet(arch, params)
        for nid, (arch, params) in build_networks(
            strategy, obs_cfg, Hyperparams(total_steps=1, workers=1)
        ).items()
    }
    return Session(stage, engine_cfg, obs_cfg, strategy, nets, **kwargs)


def drain(client):
    out = []
    while True:
        try:
            out.append(json.loads(client.outgoing.get_nowait()))
        except queue.Empty:
            return out


class TestJoin:
    def test_roles(self):
        session = desk_session()
        for role in ("spectator", "editor"):
            client = session.join(role, None)
            assert client.role == role
        with pytest.raises(ServerError):
            session.join("referee", None)

    def test_human_slot_exclusive(self):
        session = desk_session()
        session.join("human", "p0")
        with pytest.raises(ServerError, match="slot_taken"):
            session.join("human", "p0")

    def test_human_slot_freed_when_client_drops(self):
        session = desk_session()
        first = session.join("human", "p0")
        first.dropped = True
        session.join("human", "p0")  # must not raise

    def test_unknown_agent_rejected(self):
        session = desk_session()
        with pytest.raises(ServerError):
            session.join("human", "p7")

    def test_join_switches_group_to_human_control(self):
        session = desk_session()
        session.join("human", "p0")
        session.runtime._drain_edits()
        assert session.runtime.group("solo").control_mode == "human"

    def test_hello_reflects_geometry(self):
        session = desk_session()
        client = session.join("spectator", None)
        hello = session.hello_for(client)
        assert hello["grid"] == {"width": 9, "height": 9, "cell_px": 12}


class TestMessages:
    def test_human_action_buffered_for_next_decision(self):
        session = desk_session()
        client = session.join("human", "p0")
        session.handle_message(client, {"type": "human_action",
                                        "agent_id": "p0", "action": "fire"})
        session.step_once()
        # buffered action consumed without error; no error message queued
        assert all(m["type"] != "error" for m in drain(client))

    def test_spectator_cannot_act(self):
        session = desk_session()
        client = session.join("spectator", None)
        session.handle_message(client, {"type": "human_action",
                                        "agent_id": "p0", "action": "fire"})
        errors = [m for m in drain(client) if m["type"] == "error"]
        assert errors and errors[0]["code"] == "not_a_player"

    def test_acting_for_another_tank_rejected(self):
        session = desk_session()
        client = session.join("human", "p0")
        session.handle_message(client, {"type": "human_action",
                                        "agent_id": "p1", "action": "fire"})
        errors = [m for m in drain(client) if m["type"] == "error"]
        assert errors and errors[0]["code"] == "unknown_agent"

    def test_unknown_action_name_rejected(self):
        session = desk_session()
        client = session.join("human", "p0")
        session.handle_message(client, {"type": "human_action",
                                        "agent_id": "p0",
                                        "action": "warp"})
        errors = [m for m in drain(client) if m["type"] == "error"]
        assert errors and errors[0]["code"] == "malformed_message"

    def test_editor_goal_edit_acked_and_applied(self):
        session = desk_session()
        client = session.join("editor", None)
        session.handle_message(client, {"type": "goal_edit", "edit": {
            "kind": "set_working_region", "group_id": "solo",
            "rect": [0, 0, 4, 4]}})
        acks = [m for m in drain(client) if m["type"] == "ack"]
        assert acks and acks[0]["ack"]["status"] == "queued"
        session.step_once()
        spec = session.runtime.config.goal_map.entries["solo"][0]
        assert spec.working_region.to_list() == [0, 0, 4, 4]

    def test_editor_unknown_group_surfaces_error(self):
        session = desk_session()
        client = session.join("editor", None)
        session.handle_message(client, {"type": "goal_edit", "edit": {
            "kind": "set_working_region", "group_id": "nope",
            "rect": [0, 0, 4, 4]}})
        errors = [m for m in drain(client) if m["type"] == "error"]
        assert errors and errors[0]["code"] == "unknown_group"

    def test_non_editor_cannot_edit(self):
        session = desk_session()
        client = session.join("spectator", None)
        session.handle_message(client, {"type": "goal_edit", "edit": {
            "kind": "set_control_mode", "group_id": "solo",
            "mode": "human"}})
        errors = [m for m in drain(client) if m["type"] == "error"]
        assert errors and errors[0]["code"] == "protocol"

    def test_seq_numbers_are_per_client_monotone(self):
        session = desk_session()
        a = session.join("spectator", None)
        b = session.join("spectator", None)
        session.broadcast_state()
        session.broadcast_state()
        for client in (a, b):
            seqs = [m["seq"] for m in drain(client)]
            assert seqs == sorted(seqs) == list(range(1, len(seqs) + 1))

    def test_slow_client_dropped_not_blocking(self):
        session = desk_session()
        client = session.join("spectator", None)
        for _ in range(OUTGOING_QUEUE_LIMIT + 5):
            session.broadcast_state()
        assert client.dropped


class TestStepping:
    def test_step_once_advances_one_decision_step(self):
        session = desk_session()
        before = session.state.tick
        session.step_once()
        assert session.state.tick == before + session.obs_cfg.action_repeat

    def test_broadcast_carries_resolved_targets(self):
        session = desk_session()
        client = session.join("spectator", None)
        session.step_once()
        updates = [m for m in drain(client) if m["type"] == "state_update"]
        assert updates
        assert "solo" in updates[-1]["resolved_targets"]

    def test_episode_restarts_after_delay(self):
        session = desk_session(restart_delay=0.0)
        session.state.status = Status.BASE_DESTROYED
        first_episode = session.episode
        session.step_once()   # arms the restart timer
        time.sleep(0.01)
        session.step_once()   # fires the reset
        assert session.episode == first_episode + 1
        assert session.state.status == Status.RUNNING


class TestBridgeServer:
    def test_end_to_end_over_websocket(self):
        from websockets.sync.client import connect

        session = desk_session(restart_delay=0.2)
        server = BridgeServer(session, host="127.0.0.1", port=8931,
                              tick_rate=30.0)
        server.start()
        try:
            ws = connect("ws://127.0.0.1:8931")
            ws.send(json.dumps({"type": "join", "role": "human",
                                "agent_id": "p0"}))
            hello = json.loads(ws.recv(timeout=5))
            assert hello["type"] == "server_hello"
            assert hello["role"] == "human"
            ws.send(json.dumps({"type": "human_action", "agent_id": "p0",
                                "action": "left"}))
            saw_update = False
            deadline = time.time() + 5
            while time.time() < deadline:
                msg = json.loads(ws.recv(timeout=5))
                if msg["type"] == "state_update":
                    saw_update = True
                    break
            assert saw_update
            ws.close()
        finally:
            server.stop()

    def test_second_human_rejected_over_websocket(self):
        from websockets.sync.client import connect

        session = desk_session()
        server = BridgeServer(session, host="127.0.0.1", port=8932,
                              tick_rate=30.0)
        server.start()
        try:
            a = connect("ws://127.0.0.1:8932")
            a.send(json.dumps({"type": "join", "role": "human",
                               "agent_id": "p0"}))
            assert json.loads(a.recv(timeout=5))["type"] == "server_hello"
            b = connect("ws://127.0.0.1:8932")
            b.send(json.dumps({"type": "join", "role": "human",
                               "agent_id": "p0"}))
            err = json.loads(b.recv(timeout=5))
            assert err["type"] == "error" and err["code"] == "slot_taken"
            a.close()
            b.close()
        finally:
            server.stop()

    def test_bind_conflict_raises_server_error(self):
        session = desk_session()
        first = BridgeServer(session, host="127.0.0.1", port=8933)
        first.start()
        try:
            second = BridgeServer(desk_session(), host="127.0.0.1",
                                  port=8933)
            with pytest.raises(ServerError):
                second.start()
        finally:
            first.stop()
