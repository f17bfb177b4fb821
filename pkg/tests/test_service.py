"""Service protocol tests over real localhost sockets.

The envelope framing is checked against a struct-built oracle, the queue
drop policy directly, and the control/stream contracts end to end with a
live pipeline on mock backends.
"""
import io
import json
import socket
import struct
import time

import numpy as np
import pytest
from PIL import Image

from latentsteer.backends.mock import MockExtractor, MockGenerator
from latentsteer.core import Frame, PipelineConfig, seeded_rng
from latentsteer.pipeline import Pipeline
from latentsteer.service import (
    KIND_EVENT,
    KIND_FRAME,
    KIND_PREVIEW,
    PROTOCOL_VERSION,
    SteerService,
    _ClientQueue,
    pack_envelope,
    serve,
    unpack_envelopes,
)


def make_pipeline(**overrides) -> Pipeline:
    cfg = PipelineConfig(target_frame=(64, 48), standardize=False, **overrides)
    return Pipeline(MockExtractor(seed=0), MockGenerator(seed=0, resolution=64), cfg)


def make_frame(seed: int = 0) -> Frame:
    pixels = seeded_rng(seed).integers(0, 256, size=(72, 96, 3), dtype=np.uint8)
    return Frame.from_array(pixels, sequence=seed)


class ControlClient:
    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=5.0)
        self.reader = self.sock.makefile("r", encoding="utf-8")

    def send_line(self, line: str) -> dict:
        self.sock.sendall((line + "\n").encode("utf-8"))
        return json.loads(self.reader.readline())

    def request(self, kind: str, payload=None, request_id: str = "req") -> dict:
        return self.send_line(json.dumps(
            {"type": kind, "payload": payload or {}, "request_id": request_id}
        ))

    def close(self):
        self.sock.close()


class StreamClient:
    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=5.0)
        self.buffer = b""

    def read_envelopes(self, count: int, timeout: float = 5.0):
        got = []
        deadline = time.monotonic() + timeout
        self.sock.settimeout(0.2)
        while len(got) < count and time.monotonic() < deadline:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                continue
            if not chunk:
                break
            self.buffer += chunk
            envelopes, self.buffer = unpack_envelopes(self.buffer)
            got.extend(envelopes)
        return got

    def close(self):
        self.sock.close()


@pytest.fixture
def live():
    pipeline = make_pipeline()
    service = serve(pipeline)
    yield pipeline, service
    service.stop()


class TestEnvelopeFraming:
    def test_layout_matches_struct_oracle(self):
        payload = b"hello"
        data = pack_envelope(KIND_FRAME, payload)
        assert data == struct.pack(">IB", 5, 0x01) + payload
        assert data[:4] == (5).to_bytes(4, "big")
        assert data[4] == 0x01

    def test_length_counts_payload_only(self):
        data = pack_envelope(KIND_EVENT, b"x" * 300)
        (length,) = struct.unpack(">I", data[:4])
        assert length == 300
        assert len(data) == 4 + 1 + 300

    def test_empty_payload(self):
        assert pack_envelope(KIND_EVENT, b"") == b"\x00\x00\x00\x00\x02"

    def test_kind_out_of_range_rejected(self):
        from latentsteer.errors import ContractError
        with pytest.raises(ContractError):
            pack_envelope(256, b"")

    def test_unpack_handles_any_chunking(self):
        stream = b"".join([
            pack_envelope(KIND_FRAME, b"aa"),
            pack_envelope(KIND_EVENT, b"b"),
            pack_envelope(0x7F, b"ccc"),
        ])
        whole, rest = unpack_envelopes(stream)
        assert rest == b""
        assert whole == [(KIND_FRAME, b"aa"), (KIND_EVENT, b"b"), (0x7F, b"ccc")]

        drip = []
        buffer = b""
        for i in range(len(stream)):
            buffer += stream[i:i + 1]
            envelopes, buffer = unpack_envelopes(buffer)
            drip.extend(envelopes)
        assert drip == whole

    def test_unpack_keeps_incomplete_tail(self):
        data = pack_envelope(KIND_FRAME, b"abcd")
        envelopes, rest = unpack_envelopes(data[:-2])
        assert envelopes == []
        assert rest == data[:-2]


class TestClientQueue:
    def test_overflow_drops_oldest_frame_first(self):
        queue = _ClientQueue(limit=3)
        queue.push(KIND_FRAME, b"f0")
        queue.push(KIND_EVENT, b"e0")
        queue.push(KIND_FRAME, b"f1")
        queue.push(KIND_FRAME, b"f2")  # overflows: f0 goes, e0 stays
        assert queue.dropped == 1
        drained = [queue.pop(timeout=0.1) for _ in range(3)]
        assert drained == [(KIND_EVENT, b"e0"), (KIND_FRAME, b"f1"),
                           (KIND_FRAME, b"f2")]

    def test_overflow_drops_event_only_when_no_frames(self):
        queue = _ClientQueue(limit=2)
        queue.push(KIND_EVENT, b"e0")
        queue.push(KIND_EVENT, b"e1")
        queue.push(KIND_EVENT, b"e2")
        assert queue.dropped == 1
        assert queue.pop(timeout=0.1) == (KIND_EVENT, b"e1")

    def test_push_after_close_ignored(self):
        queue = _ClientQueue()
        queue.close()
        queue.push(KIND_FRAME, b"f")
        assert queue.pop(timeout=0.05) is None

    def test_pop_times_out(self):
        assert _ClientQueue().pop(timeout=0.05) is None


class TestControlSocket:
    def test_get_state_echoes_request_id(self, live):
        _, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("get_state", request_id="αβγ-42")
            assert response["request_id"] == "αβγ-42"
            assert response["ok"] is True
            assert response["state"]["mode"] == "style_mix"
        finally:
            client.close()

    def test_set_param_applies_and_echoes_state(self, live):
        pipeline, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("set_param", {"psi": 0.7}, "a1")
            assert response == {
                "request_id": "a1", "ok": True, "state": response["state"],
            }
            assert response["state"]["psi"] == 0.7
            assert pipeline.config.psi == 0.7
        finally:
            client.close()

    def test_overlapping_ranges_rejected_verbatim(self, live):
        pipeline, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("set_param", {
                "mixing_ranges": {"coarse": [0, 8], "middle": [4, 12],
                                  "fine": [12, 16]}
            })
            assert response["ok"] is False
            assert "ranges overlap" in response["error"]
            assert pipeline.config_version == 0
        finally:
            client.close()

    def test_unusable_layer_rejected_before_it_can_kill_a_tick(self, live):
        pipeline, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("set_param", {"layers": {"conv1_1": 1.0}})
            assert response["ok"] is False
            assert "64 channels" in response["error"]
            assert pipeline.config_version == 0
            # the session must still be able to produce frames
            pipeline.tick(make_frame(0))
        finally:
            client.close()

    def test_malformed_json_keeps_connection(self, live):
        _, service = live
        client = ControlClient(service.control_address)
        try:
            bad = client.send_line("{not json")
            assert bad["ok"] is False
            assert bad["request_id"] is None
            good = client.request("get_state")
            assert good["ok"] is True
        finally:
            client.close()

    def test_unknown_type_rejected(self, live):
        _, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("explode")
            assert response["ok"] is False
            assert "unknown request type" in response["error"]
        finally:
            client.close()

    def test_set_mode_and_reseed(self, live):
        pipeline, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("set_mode", {"mode": "affine"})
            assert response["ok"] is True
            assert response["state"]["mode"] == "affine"
            response = client.request("reseed", {"seed": 99})
            assert response["ok"] is True
            assert response["state"]["static_seed"] == 99
            assert pipeline.config.static_seed == 99
        finally:
            client.close()

    def test_reseed_requires_integer_seed(self, live):
        _, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("reseed", {"seed": "lots"})
            assert response["ok"] is False
            assert "integer" in response["error"]
        finally:
            client.close()

    def test_list_layers_contains_table_one_rows(self, live):
        _, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("list_layers")
            rows = response["state"]["layers"]
            wide = {(r["name"], r["rows"], r["cols"])
                    for r in rows if r["channels"] == 512}
            assert wide == {
                ("conv4_1", 32, 32), ("conv4_2", 32, 32), ("conv4_3", 32, 32),
                ("conv5_1", 16, 16), ("conv5_2", 16, 16), ("conv5_3", 16, 16),
                ("adavgpool", 7, 7),
            }
        finally:
            client.close()

    def test_invalid_value_leaves_pipeline_unchanged(self, live):
        pipeline, service = live
        client = ControlClient(service.control_address)
        try:
            response = client.request("set_param", {"psi": 99.0})
            assert response["ok"] is False
            assert pipeline.config.psi == 1.0
        finally:
            client.close()


class TestStreamSocket:
    def test_handshake_announces_protocol_version(self, live):
        _, service = live
        client = StreamClient(service.stream_address)
        try:
            (kind, payload), = client.read_envelopes(1)
            assert kind == KIND_EVENT
            handshake = json.loads(payload)
            assert handshake["type"] == "handshake"
            assert handshake["protocol_version"] == PROTOCOL_VERSION
            assert handshake["state"]["mode"] == "style_mix"
        finally:
            client.close()

    def test_frames_stream_as_decodable_jpeg(self, live):
        pipeline, service = live
        sink = service.make_sink()
        client = StreamClient(service.stream_address)
        try:
            client.read_envelopes(1)  # handshake
            for i in range(3):
                sink(pipeline.tick(make_frame(i)))
            envelopes = client.read_envelopes(3)
            assert [kind for kind, _ in envelopes] == [KIND_FRAME] * 3
            with Image.open(io.BytesIO(envelopes[0][1])) as img:
                assert img.format == "JPEG"
                assert img.size == (64, 64)
        finally:
            client.close()

    def test_preview_divisor_paces_previews(self):
        pipeline = make_pipeline()
        service = serve(pipeline, preview_divisor=2)
        sink = service.make_sink()
        client = StreamClient(service.stream_address)
        try:
            client.read_envelopes(1)
            for i in range(4):
                sink(pipeline.tick(make_frame(i)))
            envelopes = client.read_envelopes(6)
            kinds = [kind for kind, _ in envelopes]
            assert kinds.count(KIND_FRAME) == 4
            assert kinds.count(KIND_PREVIEW) == 2
            # preview follows its own frame
            assert kinds[0] == KIND_FRAME and kinds[1] == KIND_PREVIEW
            preview = next(p for k, p in envelopes if k == KIND_PREVIEW)
            with Image.open(io.BytesIO(preview)) as img:
                assert img.size == (96, 72)  # the source, not the output
        finally:
            client.close()
            service.stop()

    def test_state_event_precedes_next_frame_that_used_it(self, live):
        pipeline, service = live
        sink = service.make_sink()
        control = ControlClient(service.control_address)
        client = StreamClient(service.stream_address)
        try:
            client.read_envelopes(1)
            sink(pipeline.tick(make_frame(0)))
            assert control.request("set_param", {"psi": 0.5})["ok"] is True
            sink(pipeline.tick(make_frame(1)))
            envelopes = client.read_envelopes(3)
            kinds = [kind for kind, _ in envelopes]
            assert kinds == [KIND_FRAME, KIND_EVENT, KIND_FRAME]
            event = json.loads(envelopes[1][1])
            assert event["type"] == "state"
            assert event["state"]["psi"] == 0.5
        finally:
            control.close()
            client.close()

    def test_stalled_client_never_blocks_the_sink(self, live):
        pipeline, service = live
        sink = service.make_sink()
        stalled = socket.create_connection(service.stream_address, timeout=5.0)
        try:
            result = pipeline.tick(make_frame(0))
            # far more envelopes than the queue bound, while nobody reads
            started = time.monotonic()
            for _ in range(200):
                sink(result)
            elapsed = time.monotonic() - started
            assert elapsed < 5.0
            assert pipeline.counters.snapshot()["frames_out"] == 1
        finally:
            stalled.close()

    def test_disconnected_client_is_dropped(self, live):
        pipeline, service = live
        sink = service.make_sink()
        client = StreamClient(service.stream_address)
        client.read_envelopes(1)
        client.close()
        for i in range(5):
            sink(pipeline.tick(make_frame(i)))
        # no exception reaches the sink; service cleans the client up
        deadline = time.monotonic() + 2.0
        while time.monotonic() < deadline and len(service._clients) > 0:
            time.sleep(0.05)
        assert len(service._clients) == 0


class TestServiceLifecycle:
    def test_context_manager_starts_and_stops(self):
        pipeline = make_pipeline()
        with SteerService(pipeline) as service:
            address = service.control_address
            assert address[1] > 0
            client = ControlClient(address)
            assert client.request("get_state")["ok"] is True
            client.close()
        with pytest.raises(OSError):
            socket.create_connection(address, timeout=0.5)
