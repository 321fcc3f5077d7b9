"""Coordinate mathematics for street-level panoramas on locally flat terrain.

Angles are radians everywhere inside the package; degrees only appear at
file and command-line boundaries. Every function broadcasts over numpy
arrays, so ``GeoPoint(lat=array, lng=array)`` is a valid batch of points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRay, HorizonRay

EARTH_RADIUS_M = 6_371_000.0
TWO_PI = 2.0 * np.pi


def wrap_longitude(lng):
    """Map a longitude onto (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(lng, dtype=float), TWO_PI)
    return wrapped if np.ndim(wrapped) else float(wrapped)


def wrap_heading(heading):
    """Map a heading onto [0, 2pi)."""
    wrapped = np.mod(np.asarray(heading, dtype=float), TWO_PI)
    # mod of a tiny negative number rounds up to exactly 2pi
    wrapped = np.where(wrapped >= TWO_PI, 0.0, wrapped)
    return wrapped if np.ndim(wrapped) else float(wrapped)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lng: float

    @classmethod
    def from_degrees(cls, lat_deg, lng_deg) -> "GeoPoint":
        return cls(np.radians(lat_deg), wrap_longitude(np.radians(lng_deg)))

    @property
    def lat_deg(self):
        return np.degrees(self.lat)

    @property
    def lng_deg(self):
        return np.degrees(self.lng)


@dataclass(frozen=True)
class CameraPose:
    """Panorama capture pose: ground position, compass heading and mount height."""

    position: GeoPoint
    heading: float
    height: float

    def __post_init__(self):
        if np.any(np.asarray(self.height) <= 0):
            raise ValueError("camera height must be positive")
        object.__setattr__(self, "heading", wrap_heading(self.heading))


@dataclass(frozen=True)
class EnuVector:
    e: float
    n: float
    u: float


@dataclass(frozen=True)
class PixelPoint:
    x: float
    y: float


def enu_offset(point: GeoPoint, origin: GeoPoint):
    """East/north offsets in meters of ``point`` on the tangent plane at ``origin``."""
    e = EARTH_RADIUS_M * np.cos(origin.lat) * np.sin(point.lng - origin.lng)
    n = EARTH_RADIUS_M * np.sin(point.lat - origin.lat)
    return e, n


def offset_geo(origin: GeoPoint, e, n) -> GeoPoint:
    """Inverse of :func:`enu_offset`."""
    lat = origin.lat + np.arcsin(np.asarray(n, dtype=float) / EARTH_RADIUS_M)
    lng = origin.lng + np.arcsin(np.asarray(e, dtype=float) / (EARTH_RADIUS_M * np.cos(origin.lat)))
    return GeoPoint(lat if np.ndim(lat) else float(lat), wrap_longitude(lng))


def geo_to_enu(obj: GeoPoint, camera: CameraPose) -> EnuVector:
    """Object position relative to the camera; the up component is the drop to the ground."""
    e, n = enu_offset(obj, camera.position)
    u = -np.broadcast_to(np.asarray(camera.height, dtype=float), np.shape(e))
    if not np.ndim(e):
        return EnuVector(float(e), float(n), float(u))
    return EnuVector(e, n, u.copy())


def enu_to_pixel(v: EnuVector, camera: CameraPose, width: float, height: float) -> PixelPoint:
    """Project a ground-plane offset into the equirectangular panorama."""
    z = np.hypot(v.e, v.n)
    if np.any(z == 0):
        raise DegenerateRay("object lies directly below the camera")
    azimuth = np.arctan2(v.e, v.n)
    x = np.mod((np.pi + azimuth - camera.heading) * width / TWO_PI, width)
    # mod can return exactly `width` for tiny negative arguments
    x = np.where(x >= width, 0.0, x)
    # rows grow downward, so ground points land below the horizon row H/2
    y = (np.pi / 2 + np.arctan2(camera.height, z)) * height / np.pi
    if not np.ndim(x):
        return PixelPoint(float(x), float(y))
    return PixelPoint(x, y)


def pixel_bearing(x, camera: CameraPose, width: float):
    """Compass bearing of an image column."""
    return TWO_PI * np.asarray(x, dtype=float) / width - np.pi + camera.heading


def pixel_ground_distance(y, camera: CameraPose, height: float):
    """Distance along the ground to where the ray through row ``y`` lands."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= height / 2):
        raise HorizonRay("pixel row at or above the horizon never meets the ground")
    depression = np.pi * y / height - np.pi / 2
    return camera.height / np.tan(depression)


def pixel_to_geo(p: PixelPoint, camera: CameraPose, width: float, height: float) -> GeoPoint:
    """Intersect the ray through ``p`` with the flat ground and return its position."""
    z = pixel_ground_distance(p.y, camera, height)
    bearing = pixel_bearing(p.x, camera, width)
    return offset_geo(camera.position, z * np.sin(bearing), z * np.cos(bearing))


def haversine_m(a: GeoPoint, b: GeoPoint):
    """Great-circle distance in meters."""
    # Sum is ordered so that swapping a and b gives a bit-identical result.
    h = np.sin((a.lat - b.lat) / 2) ** 2 + (np.cos(a.lat) * np.cos(b.lat)) * np.sin((a.lng - b.lng) / 2) ** 2
    d = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return d if np.ndim(d) else float(d)
