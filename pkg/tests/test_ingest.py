import socket
import struct
import time

import numpy as np
import pytest

from streamscribe.ingest import (
    ChunkAssembler,
    IngestConfig,
    IngestError,
    RtpParseError,
    RtpReorderer,
    l16_to_float,
    load_replay_audio,
    parse_rtp_packet,
    start_ingest,
)
from streamscribe.register import RegisterConfig, ShiftingRegister
from streamscribe.evalkit.harness import write_wav

from conftest import make_samples


def build_rtp(seq, timestamp, payload, *, version=2, padding=0, csrcs=(), marker=0,
              payload_type=11, ssrc=0x1234):
    b0 = (version << 6) | (1 if padding else 0) << 5 | (len(csrcs) & 0x0F)
    b1 = (marker << 7) | payload_type
    header = struct.pack("!BBHII", b0, b1, seq & 0xFFFF, timestamp & 0xFFFFFFFF, ssrc)
    body = b"".join(struct.pack("!I", c) for c in csrcs) + payload
    if padding:
        body += bytes(padding - 1) + bytes([padding])
    return header + body


def pcm_payload(samples):
    return np.asarray(samples).astype(">i2").tobytes()


def int_samples(*values):
    return np.array(values, dtype=np.int16)


class TestRtpParsing:
    def test_basic_packet(self):
        payload = pcm_payload(int_samples(100, -100, 32767))
        pkt = parse_rtp_packet(build_rtp(5, 1600, payload))
        assert pkt.sequence_number == 5
        assert pkt.timestamp == 1600
        assert pkt.payload == payload
        assert pkt.payload_type == 11

    def test_csrc_skipped(self):
        payload = pcm_payload(int_samples(1, 2))
        pkt = parse_rtp_packet(build_rtp(1, 0, payload, csrcs=(7, 8)))
        assert pkt.payload == payload

    def test_padding_stripped(self):
        payload = pcm_payload(int_samples(1, 2))
        pkt = parse_rtp_packet(build_rtp(1, 0, payload, padding=4))
        assert pkt.payload == payload

    def test_too_short_rejected(self):
        with pytest.raises(RtpParseError):
            parse_rtp_packet(b"\x80\x0b\x00")

    def test_wrong_version_rejected(self):
        with pytest.raises(RtpParseError):
            parse_rtp_packet(build_rtp(1, 0, b"\x00\x00", version=1))

    def test_odd_payload_rejected(self):
        with pytest.raises(RtpParseError):
            parse_rtp_packet(build_rtp(1, 0, b"\x00\x00\x00"))

    def test_l16_is_big_endian_normalized(self):
        floats = l16_to_float(pcm_payload(int_samples(-32768, 0, 16384)))
        assert floats.tolist() == [-1.0, 0.0, 0.5]


class TestReorderer:
    def emit(self, reorderer, seq, ts, n):
        return reorderer.push(seq, ts, np.full(n, seq + 1, dtype=np.float32))

    def test_in_order_passthrough(self):
        r = RtpReorderer(max_fill_samples=100000)
        out = []
        for seq in range(5):
            out.extend(self.emit(r, seq, seq * 10, 10))
        assert sum(len(o) for o in out) == 50
        assert r.packets_lost == 0
        assert r.samples_zero_filled == 0

    def test_reorder_within_window_restores_order(self):
        r = RtpReorderer(max_fill_samples=100000)
        out = []
        for seq in (0, 2, 1, 3):
            out.extend(self.emit(r, seq, seq * 4, 4))
        merged = np.concatenate(out)
        assert merged.tolist() == [1] * 4 + [2] * 4 + [3] * 4 + [4] * 4
        assert r.packets_lost == 0

    def test_gap_zero_filled_by_timestamp(self):
        r = RtpReorderer(max_fill_samples=100000, window=2)
        out = []
        out.extend(self.emit(r, 0, 0, 8))
        # seq 1 lost; 2..4 arrive and overflow the window
        out.extend(self.emit(r, 2, 16, 8))
        out.extend(self.emit(r, 3, 24, 8))
        out.extend(self.emit(r, 4, 32, 8))
        merged = np.concatenate(out)
        assert merged.tolist() == [1] * 8 + [0] * 8 + [3] * 8 + [4] * 8 + [5] * 8
        assert r.packets_lost == 1
        assert r.samples_zero_filled == 8

    def test_late_packet_dropped(self):
        r = RtpReorderer(max_fill_samples=100000)
        self.emit(r, 10, 0, 4)
        out = self.emit(r, 9, 0, 4)
        assert out == []
        assert r.packets_late == 1

    def test_seq_wraparound(self):
        r = RtpReorderer(max_fill_samples=100000)
        out = []
        out.extend(self.emit(r, 65535, 0, 4))
        out.extend(self.emit(r, 0, 4, 4))
        assert sum(len(o) for o in out) == 8
        assert r.packets_lost == 0

    def test_flush_drains_pending(self):
        r = RtpReorderer(max_fill_samples=100000)
        self.emit(r, 0, 0, 4)
        self.emit(r, 2, 8, 4)  # held: seq 1 missing
        out = r.flush()
        assert sum(len(o) for o in out) == 8  # 4 zeros + packet 2
        assert r.packets_lost == 1


class TestAssembler:
    def test_chunk_boundaries_exact(self):
        reg = ShiftingRegister(RegisterConfig(4, 1, 8))
        asm = ChunkAssembler(reg)
        asm.push(np.ones(5, dtype=np.float32))
        assert asm.chunks_appended == 0
        asm.push(np.ones(5, dtype=np.float32))
        assert asm.chunks_appended == 1
        assert asm.remainder_samples == 2
        asm.push(np.ones(22, dtype=np.float32))
        assert asm.chunks_appended == 4
        assert asm.remainder_samples == 0
        assert all(len(c.samples) == 8 for c in reg._chunks)


class TestReplayFiles:
    def test_wav_roundtrip(self, tmp_path):
        samples = make_samples(16000, seed=3)
        path = tmp_path / "a.wav"
        write_wav(path, samples, 16000)
        loaded = load_replay_audio(path, 16000)
        assert loaded.size == 16000
        assert np.max(np.abs(loaded - samples)) < 1 / 32768

    def test_headerless_pcm(self, tmp_path):
        ints = np.array([0, 16384, -16384], dtype="<i2")
        path = tmp_path / "raw.pcm"
        path.write_bytes(ints.tobytes())
        assert load_replay_audio(path, 16000).tolist() == [0.0, 0.5, -0.5]

    def test_rate_mismatch_rejected(self, tmp_path):
        path = tmp_path / "a.wav"
        write_wav(path, make_samples(8000), 8000)
        with pytest.raises(IngestError, match="rate"):
            load_replay_audio(path, 16000)

    def test_odd_length_pcm_rejected(self, tmp_path):
        path = tmp_path / "raw.pcm"
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(IngestError):
            load_replay_audio(path, 16000)


def replay_config(path, pacing="unpaced", rate=16000):
    return IngestConfig(mode="file_replay", sample_rate=rate,
                        replay_path=str(path), replay_pacing=pacing)


class TestFileReplay:
    def test_12s_clip_4s_chunks_three_appends(self, tmp_path):
        path = tmp_path / "clip.wav"
        write_wav(path, make_samples(12 * 1000), 1000)
        reg = ShiftingRegister(RegisterConfig(5, 4, 1000))
        handle = start_ingest(replay_config(path, rate=1000), reg)
        handle.join(10)
        stats = handle.stop()
        assert stats.chunks_appended == 3
        assert stats.remainder_samples == 0
        assert stats.packets_lost == 0

    def test_10s_clip_4s_chunks_two_appends_with_remainder(self, tmp_path):
        path = tmp_path / "clip.wav"
        write_wav(path, make_samples(10 * 1000), 1000)
        reg = ShiftingRegister(RegisterConfig(5, 4, 1000))
        handle = start_ingest(IngestConfig(mode="file_replay", sample_rate=1000,
                                           replay_path=str(path)), reg)
        handle.join(10)
        stats = handle.stop()
        assert stats.chunks_appended == 2
        assert stats.remainder_samples == 2 * 1000
        assert stats.samples_received == stats.chunks_appended * 4000 + \
            stats.remainder_samples

    def test_realtime_pacing_takes_wall_time(self, tmp_path):
        path = tmp_path / "clip.wav"
        write_wav(path, make_samples(3 * 1000), 1000)
        reg = ShiftingRegister(RegisterConfig(5, 1, 1000))
        started = time.monotonic()
        handle = start_ingest(IngestConfig(mode="file_replay", sample_rate=1000,
                                           replay_path=str(path),
                                           replay_pacing="realtime"), reg)
        handle.join(15)
        elapsed = time.monotonic() - started
        stats = handle.stop()
        assert stats.chunks_appended == 3
        assert elapsed >= 2.9

    def test_never_ready_gate_blocks_until_stop(self, tmp_path):
        path = tmp_path / "clip.wav"
        write_wav(path, make_samples(8 * 1000), 1000)
        reg = ShiftingRegister(RegisterConfig(5, 1, 1000))
        handle = start_ingest(IngestConfig(mode="file_replay", sample_rate=1000,
                                           replay_path=str(path)), reg,
                              gate=lambda: False)
        time.sleep(0.1)
        assert reg.appended_total == 0  # gate never opens, nothing appended
        stats = handle.stop()  # stop interrupts the gate wait immediately
        assert stats.chunks_appended == 0
        assert handle.done

    def test_gate_paces_appends_to_consumer(self, tmp_path):
        path = tmp_path / "clip.wav"
        write_wav(path, make_samples(6 * 1000), 1000)
        reg = ShiftingRegister(RegisterConfig(3, 1, 1000))
        consumed = {"seq": -1}
        handle = start_ingest(
            IngestConfig(mode="file_replay", sample_rate=1000, replay_path=str(path)),
            reg, gate=lambda: reg.appended_total - 1 <= consumed["seq"])
        try:
            for expected in range(6):
                deadline = time.monotonic() + 5
                while reg.appended_total != expected + 1:
                    assert time.monotonic() < deadline
                    time.sleep(0.001)
                consumed["seq"] = expected  # consumer acknowledges one chunk
            handle.join(5)
            assert handle.stop().chunks_appended == 6
        finally:
            handle.stop()

    def test_rate_mismatch_with_register(self, tmp_path):
        path = tmp_path / "clip.wav"
        write_wav(path, make_samples(1000), 1000)
        reg = ShiftingRegister(RegisterConfig(5, 1, 2000))
        with pytest.raises(IngestError):
            start_ingest(IngestConfig(mode="file_replay", sample_rate=1000,
                                      replay_path=str(path)), reg)


class TestRtpLoopback:
    def run_stream(self, packets, *, chunk_samples=160, chunk_count=8, rate=8000,
                   drain_wait=0.6):
        reg = ShiftingRegister(RegisterConfig(chunk_count, chunk_samples / rate, rate))
        handle = start_ingest(IngestConfig(mode="rtp", sample_rate=rate, rtp_port=0),
                              reg)
        port = handle._sock.getsockname()[1]
        sender = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            for pkt in packets:
                sender.sendto(pkt, ("127.0.0.1", port))
                time.sleep(0.002)
            time.sleep(drain_wait)
        finally:
            sender.close()
        stats = handle.stop()
        return reg, stats

    def packets_for(self, n_packets, samples_per_packet=80, skip=(), reorder=None):
        order = list(range(n_packets))
        if reorder:
            order = reorder
        packets = []
        for seq in order:
            if seq in skip:
                continue
            payload = pcm_payload(np.full(samples_per_packet, 100 * (seq + 1),
                                          dtype=np.int16))
            packets.append(build_rtp(seq, seq * samples_per_packet, payload))
        return packets

    def test_clean_stream_conservation(self):
        reg, stats = self.run_stream(self.packets_for(16))
        assert stats.packets_received == 16
        assert stats.packets_lost == 0
        assert stats.samples_zero_filled == 0
        assert stats.chunks_appended == 8
        assert stats.samples_received == 16 * 80
        assert stats.samples_received + stats.samples_zero_filled == \
            stats.chunks_appended * 160 + stats.remainder_samples

    def test_lost_packet_zero_filled_cadence_preserved(self):
        # one 10 ms packet dropped; enough following packets overflow the
        # reorder window and force the gap fill
        reg, stats = self.run_stream(self.packets_for(16, skip=(3,)))
        assert stats.packets_received == 15
        assert stats.packets_lost == 1
        assert stats.samples_zero_filled == 80
        assert stats.chunks_appended == 8
        snap = reg.snapshot()
        lost_region = snap.samples[3 * 80:4 * 80]
        assert np.all(lost_region == 0.0)
        assert stats.samples_received + stats.samples_zero_filled == \
            stats.chunks_appended * 160 + stats.remainder_samples

    def test_reordered_packets_reassembled(self):
        reg, stats = self.run_stream(
            self.packets_for(8, reorder=[0, 1, 3, 2, 4, 5, 7, 6]))
        assert stats.packets_lost == 0
        assert stats.samples_zero_filled == 0
        snap = reg.snapshot()
        # sample values encode the packet seq; order must be restored
        starts = snap.samples[::80]
        assert starts.tolist() == sorted(starts.tolist())

    def test_malformed_packets_counted_and_skipped(self):
        packets = self.packets_for(4)
        packets.insert(2, b"junk")
        reg, stats = self.run_stream(packets)
        assert stats.packets_malformed == 1
        assert stats.packets_received == 4

    def test_stop_before_any_data(self):
        reg = ShiftingRegister(RegisterConfig(4, 0.02, 8000))
        handle = start_ingest(IngestConfig(mode="rtp", sample_rate=8000, rtp_port=0),
                              reg)
        stats = handle.stop()
        assert stats.packets_received == 0
        assert stats.chunks_appended == 0
        assert stats.samples_zero_filled == 0

    def test_double_stop_idempotent(self):
        reg = ShiftingRegister(RegisterConfig(4, 0.02, 8000))
        handle = start_ingest(IngestConfig(mode="rtp", sample_rate=8000, rtp_port=0),
                              reg)
        first = handle.stop()
        second = handle.stop()
        assert first is second
