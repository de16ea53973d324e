"""SMS text-mode dialogue client for a SIM900-style modem, plus a scriptable
mock modem for tests.

One send walks the classic sequence: AT, AT+CMGF=1, AT+CMGS="<number>",
then the body terminated by Ctrl-Z, expecting OK / OK / the "> " prompt /
"+CMGS: <n>" + OK in turn. Every stage has a timeout and the whole dialogue
retries with doubling backoff; both run on the injected clock so accelerated
scenarios keep real semantics. An aborted CMGS is always cancelled with ESC
before a retry, so a failure never leaves the modem half-open.
"""

from __future__ import annotations

import logging
import re
import socket
import threading
from dataclasses import dataclass, field
from time import monotonic

from .clock import Clock

logger = logging.getLogger(__name__)

CR = b"\r"
CTRL_Z = b"\x1a"
ESC = b"\x1b"
PROMPT = b"> "
OK_TERMINATOR = b"OK\r\n"
ERROR_TOKEN = b"ERROR"
CMGS_REF_RE = re.compile(rb"\+CMGS:\s*(\d+)")

STAGE_AT = "AT"
STAGE_CMGF = "CMGF"
STAGE_CMGS = "CMGS"
STAGE_BODY = "BODY"
STAGES = (STAGE_AT, STAGE_CMGF, STAGE_CMGS, STAGE_BODY)

TO_MODEM = "to_modem"
FROM_MODEM = "from_modem"

DEFAULT_STAGE_TIMEOUT_S = 5.0
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF_S = 2.0

MAX_SMS_CHARS = 160
# ASCII characters shared with the GSM 03.38 basic set; anything else would
# need an encoding decision we refuse to make implicitly.
GSM_SAFE_CHARS = frozenset(
    " !\"#$%&'()*+,-./0123456789:;<=>?@"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ_"
    "abcdefghijklmnopqrstuvwxyz"
)


class SmsError(Exception):
    pass


class SmsBodyError(SmsError, ValueError):
    """Body too long or outside the 7-bit-safe character set."""


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str  # TO_MODEM or FROM_MODEM
    data: bytes
    at_s: float  # seconds since the attempt started


@dataclass
class AtTranscript:
    """Verbatim byte record of one dialogue, terminators included."""

    entries: list[TranscriptEntry] = field(default_factory=list)
    flagged: bool = False

    def add(self, direction: str, data: bytes, at_s: float) -> None:
        if data:
            self.entries.append(TranscriptEntry(direction, data, at_s))

    def bytes_in_direction(self, direction: str) -> bytes:
        return b"".join(e.data for e in self.entries if e.direction == direction)

    def to_hex_dump(self) -> str:
        """Annotated hex dump, one entry per block."""
        lines = []
        for e in self.entries:
            arrow = ">>" if e.direction == TO_MODEM else "<<"
            printable = e.data.decode("ascii", "replace").replace("\r", "\\r").replace("\n", "\\n")
            lines.append(f"# {arrow} t+{e.at_s:.3f}s  {printable}")
            lines.append(e.data.hex(" "))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SendResult:
    sent: bool
    attempts: int
    reference: int | None = None
    failed_stage: str | None = None
    transcripts: tuple[AtTranscript, ...] = ()


def validate_sms_body(body: str) -> None:
    if len(body) > MAX_SMS_CHARS:
        raise SmsBodyError(f"SMS body too long: {len(body)} chars (max {MAX_SMS_CHARS})")
    bad = sorted({c for c in body if c not in GSM_SAFE_CHARS})
    if bad:
        raise SmsBodyError(f"SMS body contains unsafe characters: {bad!r}")


def format_alert_message(alert, patient) -> str:
    """Deterministic SMS template, always within the 160-char limit.

    ALERT <patient> <METRIC> <value><unit> <HIGH|LOW> (limit <bound><unit>) <time>
    """
    from .model import METRIC_SMS_LABEL, METRIC_UNIT, BreachBound
    from .clock import format_iso_seconds

    unit = METRIC_UNIT[alert.metric].value
    direction = "HIGH" if alert.breached_bound is BreachBound.HIGH else "LOW"
    name = patient.display_name if patient is not None else str(alert.patient_id)
    message = (
        f"ALERT {name} {METRIC_SMS_LABEL[alert.metric]} "
        f"{alert.observed_value:.1f}{unit} {direction} "
        f"(limit {alert.breached_limit:.1f}{unit}) "
        f"{format_iso_seconds(alert.created_at)}"
    )
    validate_sms_body(message)
    return message


# -- Transport ----------------------------------------------------------------


class SocketTransport:
    """Thin byte-stream wrapper over a connected socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    def write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def read(self, timeout_wall_s: float) -> bytes:
        """One chunk, or b'' on timeout/close."""
        self._sock.settimeout(max(timeout_wall_s, 0.001))
        try:
            return self._sock.recv(4096)
        except socket.timeout:
            return b""
        except OSError:
            return b""

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def connect_modem(address: tuple[str, int]) -> SocketTransport:
    return SocketTransport(socket.create_connection(address, timeout=5.0))


# -- Client dialogue -------------------------------------------------------------


class _StageFailure(Exception):
    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


def _await_token(
    transport,
    token: bytes,
    timeout_s: float,
    clock: Clock,
    transcript: AtTranscript,
    t0: float,
    stage: str,
) -> bytes:
    """Accumulate reads until token appears; ERROR or silence fails the stage."""
    buf = b""
    deadline = monotonic() + clock.to_wall(timeout_s)
    while True:
        remaining = deadline - monotonic()
        if remaining <= 0:
            raise _StageFailure(stage, "timeout")
        chunk = transport.read(remaining)
        if chunk:
            transcript.add(FROM_MODEM, chunk, monotonic() - t0)
            buf += chunk
            if token in buf:
                return buf
            if ERROR_TOKEN in buf:
                raise _StageFailure(stage, "modem answered ERROR")


def send_sms(
    phone: str,
    body: str,
    modem,
    clock: Clock | None = None,
    stage_timeout_s: float = DEFAULT_STAGE_TIMEOUT_S,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    backoff_s: float = DEFAULT_BACKOFF_S,
) -> SendResult:
    """Run the text-mode send dialogue with retries.

    The body is validated before any modem traffic. Returns Sent with the
    modem's message reference, or Failed naming the stage that broke on the
    final attempt.
    """
    validate_sms_body(body)
    clock = clock or Clock()
    transcripts: list[AtTranscript] = []
    last_stage = STAGE_AT
    for attempt in range(1, max_attempts + 1):
        transcript = AtTranscript()
        transcripts.append(transcript)
        t0 = monotonic()

        def tx(data: bytes) -> None:
            transcript.add(TO_MODEM, data, monotonic() - t0)
            modem.write(data)

        cmgs_started = False
        try:
            tx(b"AT" + CR)
            _await_token(modem, OK_TERMINATOR, stage_timeout_s, clock, transcript, t0, STAGE_AT)
            tx(b"AT+CMGF=1" + CR)
            _await_token(modem, OK_TERMINATOR, stage_timeout_s, clock, transcript, t0, STAGE_CMGF)
            cmgs_started = True
            tx(f'AT+CMGS="{phone}"'.encode("ascii") + CR)
            _await_token(modem, PROMPT, stage_timeout_s, clock, transcript, t0, STAGE_CMGS)
            tx(body.encode("ascii") + CTRL_Z)
            buf = _await_token(
                modem, OK_TERMINATOR, stage_timeout_s, clock, transcript, t0, STAGE_BODY
            )
            match = CMGS_REF_RE.search(buf)
            if match is None:
                raise _StageFailure(STAGE_BODY, "no +CMGS reference in response")
            reference = int(match.group(1))
            return SendResult(
                sent=True,
                attempts=attempt,
                reference=reference,
                transcripts=tuple(transcripts),
            )
        except _StageFailure as failure:
            last_stage = failure.stage
            logger.info(
                "event=sms_stage_failed attempt=%d stage=%s reason=%s",
                attempt, failure.stage, failure.reason,
            )
            if cmgs_started:
                # Never leave a half-open CMGS behind.
                tx(ESC)
            if attempt < max_attempts:
                clock.sleep(backoff_s * (2 ** (attempt - 1)))
    return SendResult(
        sent=False,
        attempts=max_attempts,
        failed_stage=last_stage,
        transcripts=tuple(transcripts),
    )


# -- Mock modem --------------------------------------------------------------------


@dataclass(frozen=True)
class StageBehavior:
    """What the mock does when a stage is exercised.

    action: 'ok', 'error' or 'silent'; delay_s runs on the clock before the
    response (a delay longer than the client timeout forces a stage timeout).
    """

    action: str = "ok"
    delay_s: float = 0.0


class MockModem:
    """Byte-accurate SIM900-style responder on a local TCP port.

    The script maps stage name to a list of behaviors consumed one per
    visit (the last repeats); unscripted stages use the default behavior and
    unknown commands answer ERROR and flag the transcript. One transcript is
    recorded per client connection; echo is off.
    """

    def __init__(
        self,
        script: dict[str, list[StageBehavior]] | None = None,
        default: StageBehavior = StageBehavior(),
        clock: Clock | None = None,
        port: int = 0,
    ):
        self.script = {stage: list(behaviors) for stage, behaviors in (script or {}).items()}
        self.default = default
        self.clock = clock or Clock()
        self.dialogues: list[AtTranscript] = []
        self._message_counter = 0
        self._lock = threading.Lock()
        self._server = socket.create_server(("127.0.0.1", port))
        self._threads: list[threading.Thread] = []
        self._running = False
        self._replay_responses: list[bytes] | None = None

    @classmethod
    def from_transcript(cls, transcript: AtTranscript, clock: Clock | None = None) -> "MockModem":
        """Replay modem: answers each command with the recorded response bytes."""
        modem = cls(clock=clock)
        responses: list[bytes] = []
        current = b""
        for entry in transcript.entries:
            if entry.direction == FROM_MODEM:
                current += entry.data
            elif current:
                responses.append(current)
                current = b""
        if current:
            responses.append(current)
        modem._replay_responses = responses
        return modem

    @property
    def address(self) -> tuple[str, int]:
        return self._server.getsockname()

    def start(self) -> "MockModem":
        self._running = True
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        accept_thread.start()
        self._threads.append(accept_thread)
        return self

    def stop(self) -> None:
        self._running = False
        try:
            self._server.close()
        except OSError:
            pass

    def __enter__(self) -> "MockModem":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            thread = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            thread.start()
            self._threads.append(thread)

    def _next_behavior(self, stage: str) -> StageBehavior:
        with self._lock:
            queue = self.script.get(stage)
            if not queue:
                return self.default
            return queue.pop(0) if len(queue) > 1 else queue[0]

    def _serve(self, conn: socket.socket) -> None:
        transcript = AtTranscript()
        with self._lock:
            self.dialogues.append(transcript)
        t0 = monotonic()
        buf = b""
        body_mode = False
        replay = list(self._replay_responses) if self._replay_responses is not None else None

        def respond(data: bytes) -> None:
            transcript.add(FROM_MODEM, data, monotonic() - t0)
            try:
                conn.sendall(data)
            except OSError:
                pass

        try:
            while True:
                try:
                    chunk = conn.recv(4096)
                except OSError:
                    break
                if not chunk:
                    break
                transcript.add(TO_MODEM, chunk, monotonic() - t0)
                buf += chunk
                while True:
                    if body_mode:
                        zi = buf.find(CTRL_Z)
                        ei = buf.find(ESC)
                        if zi < 0 and ei < 0:
                            break
                        if 0 <= ei < zi or zi < 0:
                            # ESC cancels the pending message; stay quiet so a
                            # retry dialogue starts cleanly aligned.
                            buf = buf[ei + 1:]
                            body_mode = False
                            continue
                        buf = buf[zi + 1:]
                        body_mode = False
                        with self._lock:
                            self._message_counter += 1
                            ref = self._message_counter
                        self._respond_stage(
                            STAGE_BODY, f"\r\n+CMGS: {ref}\r\n\r\nOK\r\n".encode(), respond, replay
                        )
                        continue
                    # A lone ESC in command mode cancels nothing; swallow it.
                    while buf.startswith(ESC):
                        buf = buf[1:]
                    ci = buf.find(CR)
                    if ci < 0:
                        break
                    line, buf = buf[:ci], buf[ci + 1:]
                    command = line.strip()
                    if not command:
                        continue
                    if command == b"AT":
                        self._respond_stage(STAGE_AT, b"\r\nOK\r\n", respond, replay)
                    elif command == b"AT+CMGF=1":
                        self._respond_stage(STAGE_CMGF, b"\r\nOK\r\n", respond, replay)
                    elif command.startswith(b"AT+CMGS="):
                        behavior = self._respond_stage(STAGE_CMGS, b"\r\n> ", respond, replay)
                        body_mode = behavior.action == "ok"
                    else:
                        transcript.flagged = True
                        respond(b"\r\nERROR\r\n")
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _respond_stage(self, stage, ok_response, respond, replay) -> StageBehavior:
        if replay is not None:
            if replay:
                respond(replay.pop(0))
            return StageBehavior("ok")
        behavior = self._next_behavior(stage)
        if behavior.delay_s > 0:
            self.clock.sleep(behavior.delay_s)
        if behavior.action == "ok":
            respond(ok_response)
        elif behavior.action == "error":
            respond(b"\r\nERROR\r\n")
        # 'silent': say nothing, let the client time out.
        return behavior


def _main() -> None:
    """Run a standalone cooperative mock modem (demos: vitalgate --modem)."""
    import argparse
    import time as _time

    parser = argparse.ArgumentParser(description="standalone mock SIM900 modem")
    parser.add_argument("--port", type=int, default=9790)
    args = parser.parse_args()
    modem = MockModem(port=args.port)
    modem.start()
    print(f"mock modem listening on 127.0.0.1:{args.port}", flush=True)
    seen = 0
    try:
        while True:
            _time.sleep(0.5)
            while seen < len(modem.dialogues):
                dialogue = modem.dialogues[seen]
                seen += 1
                print(f"--- dialogue {seen}", flush=True)
                print(dialogue.to_hex_dump(), flush=True)
    except KeyboardInterrupt:
        modem.stop()


if __name__ == "__main__":
    _main()
