"""
Shared fixtures for the stallwatch tests
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import EngineConfig  # noqa: E402
from utils.synth import NoiseSpec, Occlusion, ScenarioSpec, VehicleSpec  # noqa: E402


@pytest.fixture
def cfg():
    return EngineConfig().validate()


@pytest.fixture
def write_text(tmp_path):
    """Write `text` to tmp_path/name and return the path"""

    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write


def stop_scenario(video_id="stops", occlusions=(), duration_frames=6600):
    """
    Five vehicles on a 1920x1080 frame.

    Vehicles 1 and 2 drive the whole width on y=100 and y=600 and outline
    the learned area of interest. Vehicles 3, 4 and 5 drive 400 px, then
    stand still for 200 s, 90 s and 45 s before driving off.
    """
    vehicles = [
        VehicleSpec(0, 40.0, 100.0, segments=[(duration_frames, 4.0, 0.0)], feature_seed=1),
        VehicleSpec(0, 40.0, 600.0, segments=[(duration_frames, 4.0, 0.0)], feature_seed=2),
    ]
    for index, stop_frames in enumerate((6000, 2700, 1350)):
        vehicles.append(VehicleSpec(
            0, 100.0, 200.0 + 100.0 * index,
            segments=[(100, 4.0, 0.0), (stop_frames, 0.0, 0.0), (duration_frames, 4.0, 0.0)],
            feature_seed=3 + index,
        ))
    noise = NoiseSpec(occlusions=[Occlusion(*o) for o in occlusions])
    return ScenarioSpec(duration_frames=duration_frames, vehicles=vehicles, noise=noise,
                        rng_seed=7, video_id=video_id)


@pytest.fixture
def stop_spec():
    return stop_scenario()
