"""Shared test utilities: independent oracles and fixture plumbing.

The oracles here deliberately avoid the library's own code paths so a codec
bug cannot hide behind itself.
"""

from __future__ import annotations

import struct
from pathlib import Path

DATA_DIR = Path(__file__).parent / "data"


# -- Independent frame oracle -------------------------------------------------


def oracle_checksum(frame_data: bytes) -> int:
    """Sum bytes mod 256, subtract from 0xFF."""
    total = 0
    for b in frame_data:
        total = (total + b) % 256
    return 0xFF - total


def oracle_escape(data: bytes) -> bytes:
    out = bytearray()
    for b in data:
        if b in (0x7E, 0x7D, 0x11, 0x13):
            out += bytes([0x7D, b ^ 0x20])
        else:
            out.append(b)
    return bytes(out)


def oracle_encode_frame(frame_type: int, body: bytes, escaped: bool = False) -> bytes:
    """Build a frame byte-by-byte from the layout definition."""
    region = bytes([frame_type]) + body
    inner = struct.pack(">H", len(region)) + region + bytes([oracle_checksum(region)])
    if escaped:
        inner = oracle_escape(inner)
    return b"\x7e" + inner


# -- Golden AT dialogue ---------------------------------------------------------


def golden_sms_dialogue(phone: str, body: str, reference: int) -> list[tuple[str, bytes]]:
    """Expected (direction, bytes) chunks for one clean text-mode send."""
    return [
        (">>", b"AT\r"),
        ("<<", b"\r\nOK\r\n"),
        (">>", b"AT+CMGF=1\r"),
        ("<<", b"\r\nOK\r\n"),
        (">>", f'AT+CMGS="{phone}"\r'.encode("ascii")),
        ("<<", b"\r\n> "),
        (">>", body.encode("ascii") + b"\x1a"),
        ("<<", f"\r\n+CMGS: {reference}\r\n\r\nOK\r\n".encode("ascii")),
    ]


def load_golden_dialogue(path: Path) -> list[tuple[str, bytes]]:
    """Parse the annotated hex fixture into (direction, bytes) chunks."""
    chunks = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        direction, hex_part = line.split(None, 1)
        assert direction in (">>", "<<"), f"bad direction tag {direction!r}"
        chunks.append((direction, bytes.fromhex(hex_part)))
    return chunks


def merge_directions(entries) -> list[tuple[str, bytes]]:
    """Collapse adjacent same-direction transcript entries into chunks.

    Accepts AtTranscript entries; maps to_modem -> '>>', from_modem -> '<<'.
    """
    merged: list[tuple[str, bytes]] = []
    for entry in entries:
        tag = ">>" if entry.direction == "to_modem" else "<<"
        if merged and merged[-1][0] == tag:
            merged[-1] = (tag, merged[-1][1] + entry.data)
        else:
            merged.append((tag, entry.data))
    return merged
