"""Bundled robot descriptions and the loader for user-provided ones."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .robot import RobotModel

BUNDLED = ("panda", "planar_2r", "planar_3r")


def load_robot(name_or_path: str) -> RobotModel:
    """Load a bundled model by name ("panda", "planar_2r", "planar_3r") or a JSON file path."""
    if name_or_path in BUNDLED:
        ref = resources.files("oscbf").joinpath(f"assets/{name_or_path}.json")
        with resources.as_file(ref) as path:
            return RobotModel.load(path)
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(
            f"robot {name_or_path!r} is neither a bundled model {BUNDLED} nor an existing file"
        )
    return RobotModel.load(path)
