import hashlib
import os
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from diode_bridge.segmentation import (DATA_OVERHEAD, HEADER_SIZE, CutterConfig,
                                       LengthMismatch, PayloadTooLarge, Segment,
                                       SegmentHeader, TruncatedPacket, UnknownPacketType,
                                       checksum, cut, decode_packet, encode_packet,
                                       replicate_and_shuffle)


def test_checksum_vectors():
    assert checksum(b"").hex() == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
    assert checksum(b"abc").hex() == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")


def test_checksum_matches_second_implementation():
    from Crypto.Hash import SHA256
    data = os.urandom(1 << 20)
    assert checksum(data) == SHA256.new(data).digest()


def test_cut_20000():
    header, segs = cut(bytes(20000), CutterConfig(segment_size=8163))
    assert header.count == 3
    assert [len(s.payload) for s in segs] == [8163, 8163, 3674]
    assert header.total_length == 20000


def test_cut_empty():
    header, segs = cut(b"", CutterConfig())
    assert header.count == 1 and header.total_length == 0
    assert len(segs) == 1 and segs[0].payload == b""
    assert header.checksum == hashlib.sha256(b"").digest()


def test_cut_exact_segment():
    header, segs = cut(os.urandom(8163), CutterConfig(segment_size=8163))
    assert header.count == 1
    assert len(encode_packet(segs[0])) == 8192


def test_cut_too_many_segments():
    class Huge(bytes):
        def __len__(self):
            return 2**32 * 2
    with pytest.raises(PayloadTooLarge):
        cut(Huge(), CutterConfig(segment_size=1))


@given(st.binary(max_size=5000), st.integers(1, 600))
def test_lossless_split(payload, size):
    header, segs = cut(payload, CutterConfig(segment_size=size))
    assert b"".join(s.payload for s in sorted(segs, key=lambda s: s.index)) == payload
    assert header.count == max(1, -(-len(payload) // size))
    assert all(s.uuid == header.uuid and s.count == header.count for s in segs)
    assert header.checksum == checksum(payload)
    if payload:
        assert (header.count - 1) * size < header.total_length <= header.count * size


def test_encode_golden_data(golden):
    seg = Segment(uuid=0, count=1, index=0, payload=b"ab")
    expected = bytes.fromhex("02" + "00" * 16 + "00000001" + "00000000" + "00000002") + b"ab"
    assert encode_packet(seg) == expected == golden("data_segment_ab.bin")
    assert decode_packet(expected) == seg


def test_encode_golden_header(golden):
    hdr = SegmentHeader(uuid=0x0123456789ABCDEF_FEDCBA9876543210, count=3,
                        total_length=20000, checksum=hashlib.sha256(b"abc").digest())
    assert encode_packet(hdr) == golden("header_packet.bin")
    assert decode_packet(golden("header_packet.bin")) == hdr


def test_full_segment_is_8192_bytes():
    assert len(encode_packet(Segment(1, 1, 0, bytes(8163)))) == 8192


@given(st.integers(0, 2**128 - 1), st.integers(1, 2**32 - 1), st.integers(0, 2**64 - 1),
       st.binary(min_size=32, max_size=32))
def test_header_always_61_bytes(uuid, count, total, digest):
    hdr = SegmentHeader(uuid, count, total, digest)
    packet = encode_packet(hdr)
    assert len(packet) == HEADER_SIZE == 61
    assert decode_packet(packet) == hdr


@st.composite
def segments(draw):
    count = draw(st.integers(1, 2**32 - 1))
    return Segment(draw(st.integers(0, 2**128 - 1)), count,
                   draw(st.integers(0, count - 1)), draw(st.binary(max_size=300)))


@given(segments())
def test_segment_round_trip_and_size(seg):
    packet = encode_packet(seg)
    assert len(packet) == DATA_OVERHEAD + len(seg.payload)
    assert decode_packet(packet) == seg


def test_unknown_type():
    with pytest.raises(UnknownPacketType):
        decode_packet(b"\xff" + bytes(40))


def test_last_byte_removed(golden):
    with pytest.raises((TruncatedPacket, LengthMismatch)):
        decode_packet(golden("data_segment_ab.bin")[:-1])
    with pytest.raises((TruncatedPacket, LengthMismatch)):
        decode_packet(golden("header_packet.bin")[:-1])


def test_extra_bytes_mismatch(golden):
    with pytest.raises(LengthMismatch):
        decode_packet(golden("data_segment_ab.bin") + b"x")


def test_short_and_empty():
    with pytest.raises(TruncatedPacket):
        decode_packet(b"")
    with pytest.raises(TruncatedPacket):
        decode_packet(b"\x02" + bytes(10))


def test_replicate_factor_two():
    header, segs = cut(os.urandom(20000), CutterConfig())
    packets = replicate_and_shuffle(header, segs, CutterConfig(shuffle_seed=1))
    assert len(packets) == 8
    counts = Counter(packets)
    assert set(counts.values()) == {2}
    assert set(counts) == {encode_packet(header)} | {encode_packet(s) for s in segs}


def test_replicate_factor_one_is_permutation():
    header, segs = cut(os.urandom(3000), CutterConfig(segment_size=1000))
    cfg = CutterConfig(segment_size=1000, redundancy_factor=1, shuffle_seed=7)
    packets = replicate_and_shuffle(header, segs, cfg)
    assert sorted(packets) == sorted([encode_packet(header)] + [encode_packet(s) for s in segs])
    assert len(set(packets)) == len(packets)


def test_seeds_change_order_not_contents():
    header, segs = cut(os.urandom(20000), CutterConfig())
    a = replicate_and_shuffle(header, segs, CutterConfig(shuffle_seed=1))
    b = replicate_and_shuffle(header, segs, CutterConfig(shuffle_seed=2))
    assert Counter(a) == Counter(b)
    assert a != b
    assert a == replicate_and_shuffle(header, segs, CutterConfig(shuffle_seed=1))


def test_config_invariants():
    with pytest.raises(ValueError):
        CutterConfig(segment_size=0)
    with pytest.raises(ValueError):
        CutterConfig(redundancy_factor=0)
    with pytest.raises(ValueError):
        Segment(0, 2, 2, b"")
