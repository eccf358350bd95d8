"""Heartbeat sentences over TCP to the mock Technical Director server."""

import datetime as dt
import time

from usvnav.heartbeat import (
    ChecksumError,
    FlatEarthDatum,
    HeartbeatClient,
    MockTDServer,
    StateSnapshot,
    decode,
    encode,
    sentence_from_state,
)

datum = FlatEarthDatum(lat0=21.3099, lon0=-157.8881)
s = sentence_from_state(25.0, -40.0, datum, "OUXT", 2, dt.datetime(2026, 10, 17, 9, 30, 0))
line = encode(s)
print(repr(line))
assert decode(line) == s

bad = line.replace("OUXT", "OUXU")
try:
    decode(bad)
except ChecksumError as e:
    print("corrupted:", e)

# 5 Hz for a bit over a second; the mode switches to killed half way
with MockTDServer(echo=True) as srv:
    client = HeartbeatClient("127.0.0.1", srv.port, team_id="OUXT", rate_hz=5.0, datum=datum).start()
    client.publish(StateSnapshot(0.0, 0.0, mode=2))
    time.sleep(0.6)
    client.publish(StateSnapshot(3.0, 1.0, mode=3))
    time.sleep(0.6)
    client.stop()
    print("client metrics:", client.metrics)
    print("server kept", len(srv.valid()), "valid and", len(srv.errors()), "malformed lines")
