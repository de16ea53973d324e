"""Bit-exact encoder/decoder for XBee-style API frames and the vitals payload.

Framing follows the Digi API convention: a 0x7E start delimiter, a 16-bit
big-endian length of the frame-data region (frame type byte first), the
frame data itself, and a single checksum byte chosen so that the frame data
plus checksum sums to 0xFF modulo 256.  In escaped mode every occurrence of
0x7E/0x7D/0x11/0x13 after the start delimiter is transmitted as 0x7D
followed by the byte XOR 0x20.

Only the receive packet (0x90) and transmit request (0x10) frame bodies are
interpreted; every other frame type passes through as an opaque ApiFrame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

# -- Protocol constants -------------------------------------------------------

START_DELIMITER = 0x7E
ESCAPE_BYTE = 0x7D
XON = 0x11
XOFF = 0x13
ESCAPE_XOR = 0x20
ESCAPED_BYTES = frozenset((START_DELIMITER, ESCAPE_BYTE, XON, XOFF))

FRAME_TYPE_TRANSMIT_REQUEST = 0x10
FRAME_TYPE_RECEIVE_PACKET = 0x90

# The length field covers frame type + body, so the body itself tops out one
# byte short of 0xFFFF.
MAX_FRAME_DATA = 0xFFFF - 1

PAYLOAD_VERSION = 0x01
PAYLOAD_LENGTH = 8
_PAYLOAD_STRUCT = struct.Struct(">BHBHh")
_RECEIVE_HEADER = struct.Struct(">QHB")
_TRANSMIT_HEADER = struct.Struct(">BQHBB")


class Metric(IntEnum):
    """Wire identifiers for the vital-sign channels."""

    TEMPERATURE = 0x01
    HEART_RATE = 0x02
    ECG_SAMPLE = 0x03


# -- Errors -------------------------------------------------------------------


class FrameCodecError(ValueError):
    """Base for framing-level failures."""


class InvalidFrameError(FrameCodecError):
    pass


class LengthOverflowError(FrameCodecError):
    pass


class PayloadError(ValueError):
    """Base for telemetry payload decode failures."""


class PayloadLengthError(PayloadError):
    pass


class PayloadVersionError(PayloadError):
    pass


class UnknownMetricError(PayloadError):
    pass


# -- Domain types --------------------------------------------------------------


@dataclass(frozen=True)
class ApiFrame:
    """One API frame: type byte plus the type-specific body.

    frame_data excludes the start delimiter, length and checksum; the frame
    type is the first byte of the encoded frame-data region.
    """

    frame_type: int
    frame_data: bytes = b""

    def __post_init__(self):
        if not 0 <= self.frame_type <= 0xFF:
            raise InvalidFrameError(f"frame type out of range: {self.frame_type}")
        if len(self.frame_data) > MAX_FRAME_DATA:
            raise LengthOverflowError(
                f"frame data too long: {len(self.frame_data)} > {MAX_FRAME_DATA}"
            )


@dataclass(frozen=True)
class ReceivePacket:
    """Decoded 0x90 receive frame: source addresses, options, RF payload."""

    source_addr64: int
    source_addr16: int
    receive_options: int
    rf_data: bytes

    def to_frame(self) -> ApiFrame:
        header = _RECEIVE_HEADER.pack(
            self.source_addr64, self.source_addr16, self.receive_options
        )
        return ApiFrame(FRAME_TYPE_RECEIVE_PACKET, header + self.rf_data)

    @classmethod
    def from_frame(cls, frame: ApiFrame) -> "ReceivePacket":
        if frame.frame_type != FRAME_TYPE_RECEIVE_PACKET:
            raise InvalidFrameError(
                f"expected frame type 0x90, got 0x{frame.frame_type:02X}"
            )
        if len(frame.frame_data) < _RECEIVE_HEADER.size:
            raise InvalidFrameError(
                f"receive frame body too short: {len(frame.frame_data)} bytes"
            )
        addr64, addr16, options = _RECEIVE_HEADER.unpack_from(frame.frame_data)
        return cls(addr64, addr16, options, bytes(frame.frame_data[_RECEIVE_HEADER.size:]))


@dataclass(frozen=True)
class TransmitRequest:
    """Decoded 0x10 transmit request frame."""

    frame_id: int
    dest_addr64: int
    dest_addr16: int
    broadcast_radius: int = 0
    transmit_options: int = 0
    rf_data: bytes = b""

    def to_frame(self) -> ApiFrame:
        header = _TRANSMIT_HEADER.pack(
            self.frame_id,
            self.dest_addr64,
            self.dest_addr16,
            self.broadcast_radius,
            self.transmit_options,
        )
        return ApiFrame(FRAME_TYPE_TRANSMIT_REQUEST, header + self.rf_data)

    @classmethod
    def from_frame(cls, frame: ApiFrame) -> "TransmitRequest":
        if frame.frame_type != FRAME_TYPE_TRANSMIT_REQUEST:
            raise InvalidFrameError(
                f"expected frame type 0x10, got 0x{frame.frame_type:02X}"
            )
        if len(frame.frame_data) < _TRANSMIT_HEADER.size:
            raise InvalidFrameError(
                f"transmit frame body too short: {len(frame.frame_data)} bytes"
            )
        frame_id, addr64, addr16, radius, options = _TRANSMIT_HEADER.unpack_from(
            frame.frame_data
        )
        return cls(
            frame_id, addr64, addr16, radius, options,
            bytes(frame.frame_data[_TRANSMIT_HEADER.size:]),
        )


@dataclass(frozen=True)
class TelemetryPayload:
    """Fixed 8-byte application record carried in the RF data.

    raw_value is a big-endian signed 16-bit fixed-point quantity:
    centi-degrees C for temperature, whole BPM for heart rate, and
    microvolt-scaled integer units for ECG samples.
    """

    patient_id: int
    metric: Metric
    sequence: int
    raw_value: int
    version: int = PAYLOAD_VERSION

    def __post_init__(self):
        if not 0 <= self.patient_id <= 0xFFFF:
            raise PayloadError(f"patient_id out of range: {self.patient_id}")
        if not 0 <= self.sequence <= 0xFFFF:
            raise PayloadError(f"sequence out of range: {self.sequence}")
        if not -0x8000 <= self.raw_value <= 0x7FFF:
            raise PayloadError(f"raw_value out of range: {self.raw_value}")
        if self.version != PAYLOAD_VERSION:
            raise PayloadVersionError(f"unsupported payload version: {self.version}")
        if not isinstance(self.metric, Metric):
            raise UnknownMetricError(f"unknown metric: {self.metric!r}")


@dataclass(frozen=True)
class FrameError:
    """One parse anomaly: kind is 'noise', 'checksum' or 'malformed'."""

    kind: str
    offset: int
    detail: str


# -- Checksum and escaping ------------------------------------------------------


def compute_checksum(frame_data: bytes) -> int:
    """0xFF minus the sum of all frame-data bytes modulo 256."""
    if len(frame_data) == 0:
        raise InvalidFrameError("cannot checksum an empty frame-data region")
    return 0xFF - (sum(frame_data) & 0xFF)


def escape(data: bytes) -> bytes:
    """Apply mode-2 escaping to everything after the start delimiter."""
    out = bytearray()
    for b in data:
        if b in ESCAPED_BYTES:
            out.append(ESCAPE_BYTE)
            out.append(b ^ ESCAPE_XOR)
        else:
            out.append(b)
    return bytes(out)


def unescape(data: bytes) -> bytes:
    """Reverse mode-2 escaping. A trailing lone escape byte is an error."""
    out = bytearray()
    it = iter(data)
    for b in it:
        if b == ESCAPE_BYTE:
            try:
                out.append(next(it) ^ ESCAPE_XOR)
            except StopIteration:
                raise InvalidFrameError("dangling escape byte at end of input") from None
        else:
            out.append(b)
    return bytes(out)


# -- Frame encoding --------------------------------------------------------------


def encode_frame(frame: ApiFrame, escaped: bool = False) -> bytes:
    """Serialize a frame: delimiter, 16-bit length, frame data, checksum."""
    region = bytes([frame.frame_type]) + frame.frame_data
    if len(region) > 0xFFFF:
        raise LengthOverflowError(f"frame-data region too long: {len(region)}")
    body = struct.pack(">H", len(region)) + region + bytes([compute_checksum(region)])
    if escaped:
        body = escape(body)
    return bytes([START_DELIMITER]) + body


# -- Incremental stream decoding ---------------------------------------------------

_HUNT, _LENGTH, _DATA = range(3)


class StreamDecoder:
    """Incremental frame parser for a byte-stream transport.

    Feed arbitrary chunks; complete checksum-valid frames come back in
    order. Bytes in front of a start delimiter are skipped and reported as
    noise; a checksum mismatch drops the frame, records an error and
    resynchronizes at the next 0x7E (re-examining the bad frame's bytes,
    since none of them can be trusted). The parse result is independent of
    how the stream is chunked.

    Single-owner: one decoder per stream, not safe for concurrent feeds.
    """

    def __init__(self, escaped: bool = False):
        self.escaped = escaped
        self.errors: list[FrameError] = []
        self.consumed = 0          # bytes no longer needed for future parsing
        self._offset = 0           # absolute offset of _buf[0] in the stream
        self._buf = bytearray()
        self._noise_start: int | None = None
        self._noise_len = 0

    # - internals -

    def _emit_noise(self, detail: str = "skipped before start delimiter") -> None:
        if self._noise_len:
            self.errors.append(FrameError("noise", self._noise_start, f"{self._noise_len} byte(s) {detail}"))
        self._noise_start = None
        self._noise_len = 0

    def _drop(self, n: int) -> None:
        del self._buf[:n]
        self._offset += n
        self.consumed += n

    def _logical(self, want: int) -> tuple[bytes, int] | None:
        """Unescape up to *want* logical bytes from _buf[1:].

        Returns (logical bytes, raw bytes consumed after the delimiter) or
        None when the buffer does not yet hold enough. In escaped mode a raw
        start delimiter aborts with ('', position) so the caller can restart.
        """
        out = bytearray()
        i = 1
        n = len(self._buf)
        while len(out) < want:
            if i >= n:
                return None
            b = self._buf[i]
            if self.escaped:
                if b == START_DELIMITER:
                    return bytes(out), -i  # negative marks an embedded delimiter
                if b == ESCAPE_BYTE:
                    if i + 1 >= n:
                        return None
                    out.append(self._buf[i + 1] ^ ESCAPE_XOR)
                    i += 2
                    continue
            out.append(b)
            i += 1
        return bytes(out), i

    # - public API -

    def feed(self, data: bytes) -> list[ApiFrame]:
        """Consume a chunk, returning every frame completed by it."""
        self._buf.extend(data)
        frames: list[ApiFrame] = []
        while True:
            # Hunt for the start delimiter, accounting skipped bytes as noise.
            if not self._buf:
                break
            if self._buf[0] != START_DELIMITER:
                idx = self._buf.find(bytes([START_DELIMITER]))
                skip = len(self._buf) if idx < 0 else idx
                if self._noise_start is None:
                    self._noise_start = self._offset
                self._noise_len += skip
                self._drop(skip)
                if idx < 0:
                    break
            self._emit_noise()

            # Need the two length bytes.
            got = self._logical(2)
            if got is None:
                break
            length_bytes, used = got
            if used < 0:
                # Raw delimiter inside an escaped frame: restart there.
                self._restart_at(-used)
                continue
            region_len = struct.unpack(">H", length_bytes)[0]
            if region_len == 0:
                self.errors.append(
                    FrameError("malformed", self._offset, "zero-length frame-data region")
                )
                self._resync()
                continue

            got = self._logical(2 + region_len + 1)
            if got is None:
                break
            logical, used = got
            if used < 0:
                self._restart_at(-used)
                continue
            region = logical[2:2 + region_len]
            checksum = logical[2 + region_len]
            if (sum(region) + checksum) & 0xFF != 0xFF:
                self.errors.append(
                    FrameError(
                        "checksum",
                        self._offset,
                        f"expected 0x{compute_checksum(region):02X}, got 0x{checksum:02X}",
                    )
                )
                self._resync()
                continue
            frames.append(ApiFrame(region[0], bytes(region[1:])))
            self._drop(used)
        return frames

    def _restart_at(self, pos: int) -> None:
        """Abandon the current frame; a raw delimiter sits at buffer index pos."""
        self.errors.append(
            FrameError("noise", self._offset, f"{pos} byte(s) of aborted partial frame")
        )
        self._drop(pos)

    def _resync(self) -> None:
        """After a bad frame, rescan for the next delimiter from start+1."""
        self._drop(1)
        idx = self._buf.find(bytes([START_DELIMITER]))
        self._drop(len(self._buf) if idx < 0 else idx)

    def finish(self) -> None:
        """Flush a trailing noise run (end of stream, no more bytes coming)."""
        self._emit_noise("of trailing noise")

    def pending(self) -> int:
        """Bytes held back as a possible partial frame."""
        return len(self._buf)


def decode_stream(
    buffer: bytes, escaped: bool = False
) -> tuple[list[ApiFrame], int, list[FrameError]]:
    """One-shot parse of a buffer.

    Returns (frames, consumed byte count, errors). A trailing partial frame
    is left unconsumed; everything else, including noise, counts as consumed.
    """
    decoder = StreamDecoder(escaped=escaped)
    frames = decoder.feed(buffer)
    decoder.finish()
    return frames, decoder.consumed, decoder.errors


# -- Telemetry payload ----------------------------------------------------------


def encode_payload(p: TelemetryPayload) -> bytes:
    """Serialize to the fixed 8-byte layout."""
    return _PAYLOAD_STRUCT.pack(p.version, p.patient_id, int(p.metric), p.sequence, p.raw_value)


def decode_payload(data: bytes) -> TelemetryPayload:
    """Parse an 8-byte telemetry record; never silently defaults."""
    if len(data) != PAYLOAD_LENGTH:
        raise PayloadLengthError(
            f"payload must be {PAYLOAD_LENGTH} bytes, got {len(data)}"
        )
    version, patient_id, metric_code, sequence, raw_value = _PAYLOAD_STRUCT.unpack(data)
    if version != PAYLOAD_VERSION:
        raise PayloadVersionError(f"unsupported payload version: 0x{version:02X}")
    try:
        metric = Metric(metric_code)
    except ValueError:
        raise UnknownMetricError(f"unknown metric code: 0x{metric_code:02X}") from None
    return TelemetryPayload(patient_id, metric, sequence, raw_value)
