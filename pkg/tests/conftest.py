from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from geograph.detection import BoundingBox, Detection  # noqa: E402
from geograph.geometry import CameraPose, GeoPoint  # noqa: E402


def make_camera(lat_deg=0.0, lng_deg=0.0, heading=0.0, height=2.5) -> CameraPose:
    return CameraPose(GeoPoint.from_degrees(lat_deg, lng_deg), heading, height)


def make_detection(box=(100, 600, 140, 700), score=0.9, feature=None, camera=None, view=0,
                   gt=None, width=2048, height=1024) -> Detection:
    if feature is None:
        feature = np.ones(4) / 2.0
    return Detection(BoundingBox(*map(float, box)), score, np.asarray(feature, dtype=float),
                     camera or make_camera(), width, height, view, gt)


@pytest.fixture
def camera():
    return make_camera()
