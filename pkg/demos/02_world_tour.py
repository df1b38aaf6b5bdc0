"""Step the task world by hand and render the six builtin situations.

Prints an ASCII strip of each level and then pilots a ship through a
hidden-drift stretch to show how the drift surfaces only in perceived
movement.
"""

from soclander.config import Scalars
from soclander.environment import builtin_levels, env_step, make_world, observe

SC = Scalars()


def ascii_strip(level, rows=20):
    lines = [f"level {level.id}: width {level.width}, height {level.height}"]
    for i in range(rows):
        y = level.height * (1 - i / (rows - 1))
        left, right = level.border_at(y)
        cells = []
        for col in range(40):
            x = level.width * col / 39
            ch = "."
            if x < left or x > right:
                ch = "#"
            for ob in level.obstacles:
                if ob.x_left <= x <= ob.x_right and ob.y_bottom <= y <= ob.y_top:
                    ch = "X"
            zone = level.zone_at(y)
            if ch == "." and zone is not None:
                ch = "~" if zone.hidden else "="
            cells.append(ch)
        lines.append(f"{y:6.1f} |{''.join(cells)}|")
    return "\n".join(lines)


for level in builtin_levels():
    print(ascii_strip(level))
    kinds = sorted({z.kind for z in level.zones}) or ["none"]
    print(f"  zones: {', '.join(kinds)}   obstacles: {len(level.obstacles)}\n")

print("piloting level d with no steering: drift shows up only in perceived_dx")
level = {lvl.id: lvl for lvl in builtin_levels()}["d"]
world = make_world(level, seed=7)
obs = observe(world, SC.world)
for step in range(50):
    world, obs = env_step(world, "none", SC.world)
    if step % 5 == 4:
        print(f"  step {world.step:3d}  y={obs.ship_y:5.1f}  x={obs.ship_x:6.2f}  "
              f"perceived_dx={obs.perceived_dx:+.2f}  visible zone: {obs.visible_zone_kind}")
