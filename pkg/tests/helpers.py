"""Config builders shared by the race, CLI and acceptance tests."""
import os

from racebench.tracks import bundled_config, dead_end_map, write_map


def bundled_text(name):
    with open(bundled_config(name)) as fh:
        return fh.read()


def absolute_config(name, **replace):
    """A bundled config with data paths made absolute, so it can live anywhere."""
    text = bundled_text(name)
    base = os.path.dirname(bundled_config(name))
    text = text.replace("../tracks/", os.path.normpath(os.path.join(base, "..", "tracks")) + "/")
    for old, new in replace.items():
        text = text.replace(old, new)
    return text


DEAD_END = """experiment_id: dead_end
controller:
  name: gap_follower
  params:
    cruise_speed: 2.0
map: dead_end.yaml
start: [1.0, 2.0, 0.0]
sim:
  dt: 0.01
  max_time: 30.0
monitor:
  finish_zone:
    a: [0.2, 1.0]
    b: [0.2, 3.0]
  target_laps: 1
"""


def dead_end_config(directory):
    write_map(dead_end_map(), str(directory), "dead_end")
    path = os.path.join(str(directory), "dead_end_run.yaml")
    with open(path, "w") as fh:
        fh.write(DEAD_END)
    return path
