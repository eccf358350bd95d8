"""
Heartbeat sentence codec, TCP client and a mock Technical Director server.

Wire format (ASCII, CRLF terminated)::

    $RXHRB,<ddmmyy>,<hhmmss>,<lat>,<N|S>,<lon>,<E|W>,<team>,<mode>*<CS>\\r\\n

``lat``/``lon`` are unsigned decimal degrees with six decimals, ``mode`` is
1 (remote), 2 (autonomous) or 3 (killed) and ``CS`` is the XOR of every
byte between ``$`` and ``*`` as two uppercase hex digits.
"""

from __future__ import annotations

import datetime as _dt
import logging
import math
import queue
import re
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import Callable, List, Optional

log = logging.getLogger(__name__)

TAG = "RXHRB"
GRAMMAR_VERSION = 1
N_FIELDS = 9  # tag + 8 data fields
MODES = {1: "remote", 2: "autonomous", 3: "killed"}
_TEAM_RE = re.compile(r"^[A-Za-z0-9]+$")
_NUM_RE = re.compile(r"^\d+\.\d{6}$")


class HeartbeatError(ValueError):
    kind = "error"


class FramingError(HeartbeatError):
    kind = "framing"


class FieldCountError(HeartbeatError):
    kind = "field_count"


class FieldRangeError(HeartbeatError):
    kind = "field_range"


class ChecksumError(HeartbeatError):
    kind = "checksum"


def checksum(payload: str) -> str:
    cs = 0
    for b in payload.encode("ascii"):
        cs ^= b
    return f"{cs:02X}"


def _check_date(date: str) -> None:
    if not re.fullmatch(r"\d{6}", date):
        raise FieldRangeError(f"date must be ddmmyy, got {date!r}")
    try:
        _dt.datetime.strptime(date, "%d%m%y")
    except ValueError:
        raise FieldRangeError(f"invalid date {date!r}") from None


def _check_time(t: str) -> None:
    if not re.fullmatch(r"\d{6}", t):
        raise FieldRangeError(f"time must be hhmmss, got {t!r}")
    hh, mm, ss = int(t[:2]), int(t[2:4]), int(t[4:])
    if hh > 23 or mm > 59 or ss > 59:
        raise FieldRangeError(f"invalid time {t!r}")


@dataclass(frozen=True)
class HeartbeatSentence:
    date: str
    time: str
    lat: float
    ns: str
    lon: float
    ew: str
    team_id: str
    mode: int

    def __post_init__(self):
        _check_date(self.date)
        _check_time(self.time)
        lat = float(f"{float(self.lat):.6f}")
        lon = float(f"{float(self.lon):.6f}")
        if not (0.0 <= lat <= 90.0):
            raise FieldRangeError(f"lat out of range: {self.lat}")
        if not (0.0 <= lon <= 180.0):
            raise FieldRangeError(f"lon out of range: {self.lon}")
        if self.ns not in ("N", "S") or self.ew not in ("E", "W"):
            raise FieldRangeError("hemisphere must be N/S and E/W")
        if not _TEAM_RE.match(self.team_id):
            raise FieldRangeError(f"team id must be alphanumeric, got {self.team_id!r}")
        if isinstance(self.mode, bool) or self.mode not in MODES:
            raise FieldRangeError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)

    def payload(self) -> str:
        return ",".join(
            [TAG, self.date, self.time, f"{self.lat:.6f}", self.ns, f"{self.lon:.6f}", self.ew, self.team_id, str(self.mode)]
        )


def encode(s: HeartbeatSentence) -> str:
    p = s.payload()
    return f"${p}*{checksum(p)}\r\n"


def decode(line: str | bytes) -> HeartbeatSentence:
    """Parse one sentence; trailing CR/LF are optional.

    Raises a :class:`HeartbeatError` subclass naming what is wrong.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("ascii")
        except UnicodeDecodeError:
            raise FramingError("non-ASCII bytes") from None
    if line.endswith("\r\n"):
        line = line[:-2]
    elif line.endswith("\n"):
        line = line[:-1]
    if not line.startswith("$") or line.count("$") != 1 or line.count("*") != 1:
        raise FramingError("sentence must be '$<payload>*<checksum>'")
    body, cs = line[1:].split("*")
    if not re.fullmatch(r"[0-9A-F]{2}", cs):
        raise FramingError(f"checksum field must be two uppercase hex digits, got {cs!r}")
    if any(not (32 <= ord(ch) < 127) for ch in body):
        raise FramingError("payload contains non-printable characters")
    if checksum(body) != cs:
        raise ChecksumError(f"checksum mismatch: computed {checksum(body)}, received {cs}")
    fields = body.split(",")
    if len(fields) != N_FIELDS:
        raise FieldCountError(f"expected {N_FIELDS} fields, got {len(fields)}")
    tag, date, tm, lat, ns, lon, ew, team, mode = fields
    if tag != TAG:
        raise FramingError(f"unexpected sentence tag {tag!r}")
    if not _NUM_RE.match(lat) or not _NUM_RE.match(lon):
        raise FieldRangeError("lat/lon must be decimal degrees with six decimals")
    if not re.fullmatch(r"[1-9]", mode):
        raise FieldRangeError(f"bad mode field {mode!r}")
    s = HeartbeatSentence(date, tm, float(lat), ns, float(lon), ew, team, int(mode))
    if s.payload() != body:
        # non-canonical spelling of an otherwise valid value
        raise FieldRangeError("non-canonical field encoding")
    return s


# ---------------------------------------------------------------- geodesy


@dataclass(frozen=True)
class FlatEarthDatum:
    """Local ENU metres to latitude/longitude about an origin."""

    lat0: float = 21.3099
    lon0: float = -157.8881
    m_per_deg_lat: float = 111_320.0

    def to_latlon(self, east: float, north: float):
        lat = self.lat0 + north / self.m_per_deg_lat
        lon = self.lon0 + east / (self.m_per_deg_lat * math.cos(math.radians(self.lat0)))
        return lat, lon


def sentence_from_state(
    east: float,
    north: float,
    datum: FlatEarthDatum,
    team_id: str,
    mode: int,
    when: Optional[_dt.datetime] = None,
) -> HeartbeatSentence:
    when = when or _dt.datetime.now(_dt.timezone.utc)
    lat, lon = datum.to_latlon(east, north)
    return HeartbeatSentence(
        when.strftime("%d%m%y"),
        when.strftime("%H%M%S"),
        abs(lat),
        "N" if lat >= 0 else "S",
        abs(lon),
        "E" if lon >= 0 else "W",
        team_id,
        mode,
    )


@dataclass(frozen=True)
class StateSnapshot:
    """Immutable vessel status handed from the sim loop to the client."""

    east: float
    north: float
    mode: int = 2


# ---------------------------------------------------------------- client


class HeartbeatClient:
    """Background sender of one heartbeat per period.

    The simulation calls :meth:`publish` with immutable snapshots; the send
    thread always uses the most recent one.  Connection failures are
    retried with exponential backoff between ``backoff_min`` and
    ``backoff_max`` seconds and counted in :attr:`metrics`.
    """

    def __init__(
        self,
        host: str,
        port: int,
        team_id: str = "OUXT",
        rate_hz: float = 1.0,
        datum: FlatEarthDatum | None = None,
        backoff_min: float = 1.0,
        backoff_max: float = 30.0,
        clock: Callable[[], _dt.datetime] | None = None,
    ):
        if not (rate_hz > 0):
            raise ValueError("rate_hz must be > 0")
        if not _TEAM_RE.match(team_id):
            raise ValueError("team id must be alphanumeric")
        self.host, self.port = host, port
        self.team_id = team_id
        self.period = 1.0 / rate_hz
        self.datum = datum or FlatEarthDatum()
        self.backoff_min, self.backoff_max = backoff_min, backoff_max
        self.clock = clock
        self._inbox: "queue.Queue[StateSnapshot]" = queue.Queue()
        self._latest: Optional[StateSnapshot] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._sock: Optional[socket.socket] = None
        self.metrics = {"sent": 0, "connects": 0, "failures": 0}

    def publish(self, snap: StateSnapshot) -> None:
        self._inbox.put(snap)

    def _drain(self):
        try:
            while True:
                self._latest = self._inbox.get_nowait()
        except queue.Empty:
            pass

    def start(self) -> "HeartbeatClient":
        self._thread = threading.Thread(target=self._run, name="heartbeat-client", daemon=True)
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
        self._close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _connect(self) -> bool:
        backoff = self.backoff_min
        while not self._stop.is_set():
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=2.0)
                self.metrics["connects"] += 1
                return True
            except OSError as e:
                self.metrics["failures"] += 1
                log.debug("heartbeat connect failed: %s; retry in %.1fs", e, backoff)
                self._stop.wait(backoff)
                backoff = min(self.backoff_max, 2 * backoff)
        return False

    def _run(self):
        next_t = time.monotonic()
        while not self._stop.is_set():
            self._drain()
            if self._latest is not None:
                if self._sock is None and not self._connect():
                    break
                snap = self._latest
                when = self.clock() if self.clock else None
                line = encode(sentence_from_state(snap.east, snap.north, self.datum, self.team_id, snap.mode, when))
                try:
                    self._sock.sendall(line.encode("ascii"))
                    self.metrics["sent"] += 1
                except OSError as e:
                    log.debug("heartbeat send failed: %s", e)
                    self.metrics["failures"] += 1
                    self._close()
                    continue
            next_t += self.period
            delay = next_t - time.monotonic()
            if delay < 0:
                next_t = time.monotonic()
                delay = 0
            self._stop.wait(delay)


def client_run(endpoint, state_source: Callable[[], StateSnapshot], rate_hz: float = 1.0, duration: float | None = None, **kw) -> dict:
    """Blocking send loop polling ``state_source`` every period; returns the client metrics."""
    host, port = endpoint
    client = HeartbeatClient(host, port, rate_hz=rate_hz, **kw).start()
    t_end = None if duration is None else time.monotonic() + duration
    try:
        while t_end is None or time.monotonic() < t_end:
            client.publish(state_source())
            time.sleep(min(0.05, client.period))
    finally:
        client.stop()
    return dict(client.metrics)


# ---------------------------------------------------------------- mock server


@dataclass(frozen=True)
class Record:
    conn_id: int
    received: float
    raw: str
    sentence: Optional[HeartbeatSentence]
    error: Optional[str] = None


class LineAssembler:
    """Splits a byte stream into lines regardless of how it was segmented."""

    def __init__(self, max_line: int = 4096):
        self.buf = bytearray()
        self.max_line = max_line

    def feed(self, data: bytes) -> List[bytes]:
        self.buf.extend(data)
        lines = []
        while True:
            i = self.buf.find(b"\n")
            if i < 0:
                break
            lines.append(bytes(self.buf[: i + 1]))
            del self.buf[: i + 1]
        if len(self.buf) > self.max_line:
            lines.append(bytes(self.buf))
            self.buf.clear()
        return lines


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: MockTDServer = self.server.owner  # type: ignore[attr-defined]
        conn_id = srv._new_conn()
        asm = LineAssembler()
        self.request.settimeout(0.2)
        while not srv._closing.is_set():
            try:
                data = self.request.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            for raw in asm.feed(data):
                srv._ingest(conn_id, raw)


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class MockTDServer:
    """Threaded TCP server that decodes and records every received line."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, echo: bool = False):
        self.host = host
        self._requested_port = port
        self.echo = echo
        self._lock = threading.Lock()
        self._records: List[Record] = []
        self._conns = 0
        self._closing = threading.Event()
        self._srv: Optional[_TCPServer] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._srv.server_address[1] if self._srv else self._requested_port

    def start(self) -> "MockTDServer":
        self._closing.clear()
        self._srv = _TCPServer((self.host, self._requested_port), _Handler)
        self._srv.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._closing.set()
        if self._srv is not None:
            self._srv.shutdown()
            self._srv.server_close()
        if self._thread is not None:
            self._thread.join(2.0)
        self._srv = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _new_conn(self) -> int:
        with self._lock:
            self._conns += 1
            return self._conns

    def _ingest(self, conn_id: int, raw: bytes) -> None:
        text = raw.decode("ascii", errors="replace")
        try:
            rec = Record(conn_id, time.time(), text, decode(raw))
        except HeartbeatError as e:
            rec = Record(conn_id, time.time(), text, None, e.kind)
        with self._lock:
            self._records.append(rec)
        if self.echo:
            print(f"[conn {conn_id}] {'OK ' if rec.sentence else 'ERR'} {text.strip()}" + (f" ({rec.error})" if rec.error else ""))

    @property
    def records(self) -> List[Record]:
        with self._lock:
            return list(self._records)

    def valid(self) -> List[Record]:
        return [r for r in self.records if r.sentence is not None]

    def errors(self) -> List[Record]:
        return [r for r in self.records if r.sentence is None]

    def wait_for(self, n: int, timeout: float = 5.0) -> bool:
        end = time.monotonic() + timeout
        while time.monotonic() < end:
            if len(self.records) >= n:
                return True
            time.sleep(0.01)
        return len(self.records) >= n


def mock_server_run(port: int, host: str = "0.0.0.0") -> None:
    """Serve until interrupted, printing each received line."""
    srv = MockTDServer(host, port, echo=True).start()
    print(f"mock TD server listening on {host}:{srv.port}")
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        srv.stop()
