"""One full episode, narrated through the two senses of control.

Runs the balanced configuration on the short-reaction hidden-drift level
and prints an ASCII chart of LL SoC, HL SoC, steering and strategy changes.
"""

from soclander.agent import AgentConfig, run_episode
from soclander.environment import builtin_levels
from soclander.harness import detect_strategy_changes, soc_window_stats

level = {lvl.id: lvl for lvl in builtin_levels()}["e"]
config = AgentConfig(fixed_k=0.3, ccl_threshold=0.7, ccl_enabled=True, seed=12349)
trace = run_episode(level, config)
events = soc_window_stats(trace, detect_strategy_changes(trace))
event_steps = {e.step for e in events}

print(f"level e, fixed K={config.fixed_k}, CCL threshold={config.ccl_threshold}: "
      f"{trace.outcome} after {trace.steps} steps, {len(events)} strategy changes\n")

BAR = 30
print("step   LL SoC                          HL SoC   input  intention")
for r in trace.records:
    if r.step % 2:
        continue
    ll_bar = "#" * int(round(r.ll_soc * BAR))
    marks = []
    if r.trigger:
        marks.append("TRIGGER")
    if r.step in event_steps:
        marks.append("STRATEGY CHANGE")
    print(f"{r.step:4d}  |{ll_bar:<{BAR}}| {r.ll_soc:4.2f}  hl={r.hl_soc:4.2f}  "
          f"{r.input:5s}  {r.intention or '':9s} {' '.join(marks)}")

if events:
    print("\nSoC around the detected strategy changes (150 ms before, 600 ms after):")
    for e in events:
        print(f"  step {e.step:3d}: LL {e.soc_prior_ll:.3f} -> {e.soc_post_ll:.3f}   "
              f"HL {e.soc_prior_hl:.3f} -> {e.soc_post_hl:.3f}")
