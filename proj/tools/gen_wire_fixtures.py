#!/usr/bin/env python3
"""Writes the shared wire conformance fixtures (hex dumps) into data/wire/.

Built with Python's struct module so the fixtures do not depend on the C++ encoder.
Each .hex file holds one framed message as lowercase hex, 32 bytes per line.
A manifest (fixtures.json) records the decoded fields the consumers must reproduce.
"""
import json
import pathlib
import struct

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "wire"


def frame(msg_type, payload):
    return b"SV" + struct.pack("<BI", msg_type, len(payload)) + payload


def dump(name, data):
    lines = [data[i:i + 32].hex() for i in range(0, len(data), 32)] or [""]
    (OUT / f"{name}.hex").write_text("\n".join(lines) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    fixtures = []

    pose = [0.9238795325112867, 0.0, 0.3826834323650898, 0.0, 0.25, -1.5, 2.0]
    payload = struct.pack("<QB7d", 1_700_000_000_123_456_789, 1, *pose)
    dump("pose_robot_head", frame(2, payload))
    fixtures.append({"file": "pose_robot_head.hex", "type": 2,
                     "pose": {"timestamp_ns": 1_700_000_000_123_456_789, "frame_id": 1, "values": pose}})

    ping = struct.pack("<3Q", 1000, 0, 0)
    dump("clock_ping", frame(3, ping))
    fixtures.append({"file": "clock_ping.hex", "type": 3, "clock": {"t1": 1000, "t2": 0, "t3": 0}})

    pong = struct.pack("<3Q", 1000, 26_000_500, 26_000_900)
    dump("clock_pong", frame(4, pong))
    fixtures.append({"file": "clock_pong.hex", "type": 4, "clock": {"t1": 1000, "t2": 26_000_500, "t3": 26_000_900}})

    w, h = 2, 2
    pixels = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30])
    raw = struct.pack("<QBBHH", 42_000_000, 0, 0, w, h) + pixels
    dump("frame_raw_2x2", frame(1, raw))
    fixtures.append({"file": "frame_raw_2x2.hex", "type": 1,
                     "frame": {"capture_timestamp_ns": 42_000_000, "camera_id": 0, "encoding": 0,
                               "width": w, "height": h, "payload_hex": pixels.hex()}})

    jpeg_stub = bytes([0xFF, 0xD8, 0xFF, 0xD9])
    jpg = struct.pack("<QBBHH", 43_000_000, 1, 1, 512, 512) + jpeg_stub
    dump("frame_jpeg_header", frame(1, jpg))
    fixtures.append({"file": "frame_jpeg_header.hex", "type": 1,
                     "frame": {"capture_timestamp_ns": 43_000_000, "camera_id": 1, "encoding": 1,
                               "width": 512, "height": 512, "payload_hex": jpeg_stub.hex()}})

    cfg = b'{"r":0.5}'
    dump("config_radius", frame(5, cfg))
    fixtures.append({"file": "config_radius.hex", "type": 5, "config": cfg.decode()})

    dump("empty_ping", frame(3, b""))
    fixtures.append({"file": "empty_ping.hex", "type": 3, "payload_size": 0})

    (OUT / "fixtures.json").write_text(json.dumps({"schema": 1, "fixtures": fixtures}, indent=2) + "\n")


if __name__ == "__main__":
    main()
