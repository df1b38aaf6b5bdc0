"""Talk to the session service over its wire protocol, in-process.

Drives a scripted "human" session: create a level, steer for a while,
answer a self-report probe, and export the trace, then replays the
exported trace against the environment to confirm zero divergence.
"""

import json
import tempfile
from pathlib import Path

from soclander.agent import replay
from soclander.config import Scalars
from soclander.environment import builtin_levels
from soclander.service import ProtocolConnection, SessionManager
from soclander.traces import read_trace

export_dir = Path(tempfile.mkdtemp(prefix="soclander_session_"))
conn = ProtocolConnection(SessionManager(scalars=Scalars()), export_dir=export_dir)

print("->", {"type": "hello", "proto": 1})
for reply in conn.handle_message({"type": "hello", "proto": 1}):
    print("<-", reply)

create = {"type": "create", "level": "a", "mode": "human", "seed": 123,
          "probe_period_steps": 60}
print("->", create)
first = conn.handle_message(create)[0]
print("<- frame 0: ship at", first["ship"], "marked zones:", first["marked_zones"])

# a simple scripted player: hold the middle of the corridor
ship_x = first["ship"][0]
while conn.active:
    if ship_x > 20.5:
        conn.handle_message({"type": "input", "dir": "left"})
    elif ship_x < 19.5:
        conn.handle_message({"type": "input", "dir": "right"})
    for msg in conn.tick():
        if msg["type"] == "frame":
            ship_x = msg["ship"][0]
            if msg["step"] % 40 == 0:
                print(f"<- frame {msg['step']:3d}: ship {msg['ship']}")
        if msg.get("probe"):
            print(f"<- probe request at step {msg['step']}; answering 5")
            conn.handle_message({"type": "probe_response", "value": 5})
        if msg["type"] == "ended":
            print("<-", json.dumps(msg))

trace_path = export_dir / f"{conn.session.id}_a.csv"
trace = read_trace(trace_path)
level = {lvl.id: lvl for lvl in builtin_levels()}["a"]
report = replay(trace, level)
print(f"\nexported {trace_path.name}: {trace.steps} steps, outcome {trace.outcome}")
print(f"replay against the environment: "
      f"{'zero divergences' if report.ok else report.first}")
print(f"probes: {(export_dir / (conn.session.id + '_a_probes.csv')).read_text().strip()}")
