"""Single entry point: gateway, simulator, frame inspector, store tools.

Exit codes: 0 success, 1 usage or document validation, 2 I/O (files,
sockets), 3 protocol (frames, payloads, SMS dialogue). Flag values fall
back to VITALGATE_* environment variables, then to built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import threading
import time

from . import __version__
from .clock import Clock, SimClock, format_iso, parse_iso

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_PROTOCOL = 3

ENV_PREFIX = "VITALGATE_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _env_default(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name, fallback)


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vitalgate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vitalgate {__version__}")
    top = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gateway = top.add_parser("gateway", help="run the coordinator gateway")
    gateway_sub = gateway.add_subparsers(dest="action", required=True, metavar="ACTION")
    g_run = gateway_sub.add_parser("run", help="listen for node streams and serve the API")
    g_run.add_argument("--listen", type=_address, default=_env_default("LISTEN", "127.0.0.1:9750"),
                       help="node stream listen address (default %(default)s)")
    g_run.add_argument("--http", type=_address, default=_env_default("HTTP", "127.0.0.1:9780"),
                       help="HTTP API listen address (default %(default)s)")
    g_run.add_argument("--store", default=_env_default("STORE", "vitals.log"),
                       help="reading log path (default %(default)s)")
    g_run.add_argument("--patients", default=_env_default("PATIENTS"), required=False,
                       help="patient registry JSON file")
    g_run.add_argument("--modem", type=_address, default=_env_default("MODEM"),
                       help="GSM modem address (omit to disable SMS)")
    g_run.add_argument("--clock-accel", type=float, default=float(_env_default("CLOCK_ACCEL", 1.0)),
                       help="clock acceleration factor k >= 1 (default %(default)s)")
    g_run.add_argument("--escaped", action="store_true", help="decode escaped-mode frames")
    g_run.add_argument("--static", default=_env_default("STATIC"),
                       help="directory with the dashboard bundle to serve at /")

    sim = top.add_parser("sim", help="run a simulated node fleet")
    sim_sub = sim.add_subparsers(dest="action", required=True, metavar="ACTION")
    s_run = sim_sub.add_parser("run", help="execute a scenario against a gateway")
    s_run.add_argument("--scenario", required=True, help="scenario file")
    s_run.add_argument("--connect", type=_address,
                       default=_env_default("CONNECT", "127.0.0.1:9750"),
                       help="gateway address (default %(default)s)")
    s_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    frames = top.add_parser("frames", help="wire-format tools")
    frames_sub = frames.add_subparsers(dest="action", required=True, metavar="ACTION")
    f_inspect = frames_sub.add_parser("inspect", help="hex + decoded dump of a frame capture")
    f_inspect.add_argument("input", help="capture file, or - for stdin")
    f_inspect.add_argument("--escaped", action="store_true", help="capture uses escaped mode")

    store = top.add_parser("store", help="query the reading log")
    store_sub = store.add_subparsers(dest="action", required=True, metavar="ACTION")
    s_query = store_sub.add_parser("query", help="print readings for one patient/metric window")
    s_query.add_argument("--store", default=_env_default("STORE", "vitals.log"),
                         help="reading log path (default %(default)s)")
    s_query.add_argument("--patient", type=int, required=True)
    s_query.add_argument("--metric", required=True, choices=["temperature", "heart_rate", "ecg"])
    s_query.add_argument("--from", dest="start", required=True, help="ISO-8601 start (inclusive)")
    s_query.add_argument("--to", dest="end", required=True, help="ISO-8601 end (exclusive)")
    s_query.add_argument("--csv", action="store_true", help="emit store-format CSV with header")

    replay = top.add_parser("replay", help="re-feed a reading log through rule evaluation")
    replay.add_argument("--log", required=True, help="reading log to replay")
    replay.add_argument("--speed", type=float, default=0.0,
                        help="pace factor k (0 = as fast as possible)")
    replay.add_argument("--live-alerts", action="store_true",
                        help="print alert records instead of suppressing them")
    replay.add_argument("--patients", default=_env_default("PATIENTS"),
                        help="patient registry JSON (defaults per metric otherwise)")

    report = top.add_parser("report", help="render CSV + PNG series reports from a log")
    report.add_argument("--store", default=_env_default("STORE", "vitals.log"),
                        help="reading log path (default %(default)s)")
    report.add_argument("--out", required=True, help="output directory")
    report.add_argument("--patient", type=int, action="append",
                        help="limit to patient id (repeatable)")
    report.add_argument("--metric", action="append",
                        choices=["temperature", "heart_rate", "ecg"],
                        help="limit to metric (repeatable)")
    report.add_argument("--from", dest="start", help="ISO-8601 window start")
    report.add_argument("--to", dest="end", help="ISO-8601 window end")

    return parser


# -- Subcommand bodies ---------------------------------------------------------------


def _cmd_gateway_run(args) -> int:
    from .gateway_core import Gateway, PatientRegistry, load_patient_registry
    from .http_api import ApiServer
    from .store import AlertStore, ReadingStore

    if args.patients:
        registry = load_patient_registry(args.patients)
    else:
        registry = PatientRegistry()
        print("warning: no --patients file; every node will be unknown", file=sys.stderr)
    clock = SimClock(accel=args.clock_accel) if args.clock_accel > 1 else Clock()
    fsync = _env_default("FSYNC", "always")
    store = ReadingStore(args.store, fsync=fsync, known_patients=registry.ids())
    alert_store = AlertStore(args.store + ".alerts", fsync=fsync)
    gateway = Gateway(
        registry=registry,
        store=store,
        alert_store=alert_store,
        clock=clock,
        modem_address=args.modem if args.modem else None,
        escaped=args.escaped,
    )
    api = ApiServer(gateway, static_dir=args.static)
    listen = gateway.start(tuple(args.listen))
    http = api.start(tuple(args.http))
    print(
        f"gateway: nodes on {listen[0]}:{listen[1]}, API on http://{http[0]}:{http[1]}/",
        flush=True,
    )

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.wait(0.25):
            pass
    finally:
        api.stop()
        gateway.stop()
        store.close()
        alert_store.close()
        counters = gateway.counters.as_dict()
        print("counters: " + " ".join(f"{k}={v}" for k, v in counters.items()))
    return EXIT_OK


def _cmd_sim_run(args) -> int:
    from .simulator import TcpSink, load_scenario, run_scenario

    with open(args.scenario, "r", encoding="utf-8") as fh:
        scenario = load_scenario(fh.read())
    if args.seed is not None:
        scenario.seed = args.seed
    for note in scenario.applied_defaults:
        print(f"default applied: {note}", file=sys.stderr)
    sink = TcpSink(tuple(args.connect))
    try:
        report = run_scenario(scenario, sink)
    finally:
        sink.close()
    print(f"emitted {report.count()} readings in {report.frames} frames "
          f"({report.bytes_sent} bytes)")
    if report.aborted:
        print(f"aborted: {report.error}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _cmd_frames_inspect(args) -> int:
    from .model import metric_name
    from .wire_codec import (
        FRAME_TYPE_RECEIVE_PACKET,
        PayloadError,
        ReceivePacket,
        decode_payload,
        decode_stream,
        encode_frame,
    )

    if args.input == "-":
        data = sys.stdin.buffer.read()
    else:
        with open(args.input, "rb") as fh:
            data = fh.read()
    frames, consumed, errors = decode_stream(data, escaped=args.escaped)
    for i, frame in enumerate(frames):
        raw = encode_frame(frame, escaped=args.escaped)
        print(f"frame {i}: type=0x{frame.frame_type:02X} length={len(frame.frame_data) + 1}")
        print(f"  hex: {raw.hex(' ')}")
        if frame.frame_type == FRAME_TYPE_RECEIVE_PACKET:
            try:
                packet = ReceivePacket.from_frame(frame)
                print(f"  receive: source64={packet.source_addr64:016X} "
                      f"source16={packet.source_addr16:04X} options=0x{packet.receive_options:02X}")
                payload = decode_payload(packet.rf_data)
                print(f"  payload: patient={payload.patient_id} "
                      f"metric={metric_name(payload.metric)} seq={payload.sequence} "
                      f"raw={payload.raw_value}")
            except (PayloadError, ValueError) as exc:
                print(f"  payload: undecodable ({exc})")
    for err in errors:
        print(f"error at offset {err.offset}: {err.kind}: {err.detail}")
    trailing = len(data) - consumed
    if trailing:
        print(f"{trailing} trailing byte(s) of a partial frame left unconsumed")
    print(f"{len(frames)} frame(s), {len(errors)} error(s)")
    return EXIT_OK


def _cmd_store_query(args) -> int:
    from .model import metric_from_name
    from .store import ReadingStore, StoreNotFoundError, format_reading_line

    store = ReadingStore(args.store)
    try:
        try:
            readings = store.query_readings(
                args.patient, metric_from_name(args.metric), parse_iso(args.start), parse_iso(args.end)
            )
        except StoreNotFoundError:
            readings = []
        if args.csv:
            print("timestamp,patient_id,metric,value,sequence,source_addr64")
            for r in readings:
                sys.stdout.write(format_reading_line(r))
        else:
            for r in readings:
                print(f"{format_iso(r.timestamp)}  {r.value} {r.unit.value}  seq={r.sequence}")
    finally:
        store.close()
    return EXIT_OK


def _cmd_replay(args) -> int:
    from .gateway_core import Decision, RuleState, evaluate, load_patient_registry
    from .model import default_thresholds, metric_name
    from .store import iter_log_readings

    registry = load_patient_registry(args.patients) if args.patients else None
    readings = sorted(iter_log_readings(args.log), key=lambda r: r.timestamp)
    states: dict = {}
    counts = {d: 0 for d in Decision}
    alerts = []
    previous_ts = None
    for reading in readings:
        if args.speed > 0 and previous_ts is not None:
            gap = (reading.timestamp - previous_ts).total_seconds()
            if gap > 0:
                time.sleep(gap / args.speed)
        previous_ts = reading.timestamp
        if registry is not None:
            patient = registry.get(reading.patient_id)
            thresholds = patient.thresholds.get(reading.metric) if patient else None
        else:
            thresholds = default_thresholds().get(reading.metric)
        if thresholds is None:
            continue
        state = states.setdefault((reading.patient_id, reading.metric), RuleState())
        decision = evaluate(reading, thresholds, state)
        counts[decision] += 1
        if decision is Decision.NEW_ALERT:
            state.open_alert_id = "replay"
            state.last_alert_at = reading.timestamp
            alerts.append(reading)
            if args.live_alerts:
                print(f"ALERT {format_iso(reading.timestamp)} patient={reading.patient_id} "
                      f"{metric_name(reading.metric)}={reading.value}{reading.unit.value}")
        elif decision is Decision.RESOLVES_ALERT:
            state.open_alert_id = None
            state.consecutive_in_range = 0
    print(f"replayed {len(readings)} readings: "
          + " ".join(f"{d.value}={n}" for d, n in counts.items()))
    if not args.live_alerts and alerts:
        print(f"({len(alerts)} alert(s) suppressed; use --live-alerts to show them)")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .model import metric_from_name
    from .report import render_series_report
    from .store import ReadingStore

    store = ReadingStore(args.store)
    try:
        written = render_series_report(
            store,
            args.out,
            patient_ids=args.patient,
            metrics=[metric_from_name(m) for m in args.metric] if args.metric else None,
            start=parse_iso(args.start) if args.start else None,
            end=parse_iso(args.end) if args.end else None,
        )
    finally:
        store.close()
    for path in written:
        print(path)
    print(f"wrote {len(written)} file(s) to {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE

    from .sms_alerting import SmsError
    from .simulator import ScenarioError
    from .gateway_core import RegistryError
    from .wire_codec import FrameCodecError, PayloadError

    try:
        if args.command == "gateway":
            return _cmd_gateway_run(args)
        if args.command == "sim":
            return _cmd_sim_run(args)
        if args.command == "frames":
            return _cmd_frames_inspect(args)
        if args.command == "store":
            return _cmd_store_query(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.command == "report":
            return _cmd_report(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (FrameCodecError, PayloadError, SmsError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ScenarioError, RegistryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
