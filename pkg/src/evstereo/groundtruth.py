"""Ground-truth disparity from 3D marker trajectories.

Marker positions project through per-camera 3x4 matrices onto the full
resolution image planes, map into the downscaled/cropped frame of the
network input, and reduce to a per-window disparity trace d = u_right -
u_left (the same sign convention as the network's disparity coordinate).
Ground truth keeps sub-pixel precision end to end; only events are integer.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .events import CameraGeometry
from .simulator import window_centers_us, window_count

MARKER_CSV_HEADER = "t_us,joint,X_mm,Y_mm,Z_mm"
TRACE_CSV_HEADER = "window_i,t_center_us,d_mean,d_min,d_max,n_joints"


@dataclass
class MarkerTrack3D:
    joint: str
    t: np.ndarray  # int64 microseconds, sorted
    xyz: np.ndarray  # (n, 3) float64 millimetres

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.int64)
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        if self.xyz.shape != (len(self.t), 3):
            raise ValueError("xyz must be (n, 3)")
        if np.any(np.diff(self.t) < 0):
            raise ValueError(f"track {self.joint!r} not time-sorted")


@dataclass
class Track2D:
    """Projected track: pixel positions plus validity (w' > 0) and
    visibility (valid and inside the frame of its stage)."""

    joint: str
    t: np.ndarray
    uv: np.ndarray  # (n, 2) float64
    valid: np.ndarray  # (n,) bool
    visible: np.ndarray  # (n,) bool


@dataclass
class DisparityTrace:
    """Per-window ground-truth disparity in downscaled pixels; NaN marks
    windows with no visible joint."""

    window_us: int
    d_mean: np.ndarray
    d_min: np.ndarray
    d_max: np.ndarray
    n_joints: np.ndarray
    per_joint: np.ndarray  # (n_joints, n_windows), NaN where invisible
    joints: tuple[str, ...]

    @property
    def n_windows(self) -> int:
        return len(self.d_mean)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.d_mean)


def check_projection_matrix(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (3, 4):
        raise ValueError(f"projection matrix must be 3x4, got {P.shape}")
    return P


def project_markers(tracks: list[MarkerTrack3D], P: np.ndarray, geometry: CameraGeometry) -> list[Track2D]:
    """Perspective projection (u, v) = (p0/p2, p1/p2) of homogeneous world
    points; samples with w' <= 0 are flagged invalid, samples landing outside
    the frame are flagged not visible. Nothing is dropped."""
    P = check_projection_matrix(P)
    out = []
    for track in tracks:
        n = len(track.t)
        homog = np.hstack([track.xyz, np.ones((n, 1))])
        proj = homog @ P.T  # (n, 3)
        wprime = proj[:, 2]
        valid = wprime > 0
        uv = np.full((n, 2), np.nan)
        uv[valid] = proj[valid, :2] / wprime[valid, None]
        visible = valid.copy()
        inside = (
            (uv[:, 0] >= 0) & (uv[:, 0] < geometry.width) & (uv[:, 1] >= 0) & (uv[:, 1] < geometry.height)
        )
        visible &= np.where(np.isnan(uv[:, 0]), False, inside)
        out.append(Track2D(joint=track.joint, t=track.t.copy(), uv=uv, valid=valid, visible=visible))
    return out


def to_downscaled_coords(
    track: Track2D,
    factor: int,
    crop_origin: tuple[int, int],
    crop_size: tuple[int, int],
) -> Track2D:
    """(u, v) -> (u/factor - crop_x, v/factor - crop_y), kept sub-pixel;
    visibility re-evaluated against the crop window."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    ox, oy = crop_origin
    w, h = crop_size
    uv = track.uv / factor - np.array([ox, oy], dtype=np.float64)
    visible = track.valid & ~np.isnan(uv[:, 0])
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    visible &= np.where(np.isnan(uv[:, 0]), False, inside)
    return Track2D(joint=track.joint, t=track.t.copy(), uv=uv, valid=track.valid.copy(), visible=visible)


def _interp_visible(track: Track2D, t_center: float) -> float | None:
    """Horizontal position linearly interpolated at t_center, or None when
    the centre is outside the track or a bracketing sample is not visible."""
    t = track.t
    if len(t) == 0 or t_center < t[0] or t_center > t[-1]:
        return None
    hi = int(np.searchsorted(t, t_center, side="left"))
    if hi < len(t) and t[hi] == t_center:
        lo = hi
    else:
        lo = hi - 1
    if lo < 0:
        return None
    hi = min(hi, len(t) - 1)
    if not (track.visible[lo] and track.visible[hi]):
        return None
    if lo == hi or t[hi] == t[lo]:
        return float(track.uv[lo, 0])
    frac = (t_center - t[lo]) / (t[hi] - t[lo])
    return float(track.uv[lo, 0] + frac * (track.uv[hi, 0] - track.uv[lo, 0]))


def disparity_trajectory(
    left_tracks: list[Track2D],
    right_tracks: list[Track2D],
    window_us: int,
    n_windows: int | None = None,
) -> DisparityTrace:
    """Per-joint disparity u_right - u_left interpolated to window centres,
    aggregated to mean/min/max over joints visible in both views."""
    lefts = {tr.joint: tr for tr in left_tracks}
    rights = {tr.joint: tr for tr in right_tracks}
    joints = tuple(sorted(set(lefts) & set(rights)))
    if not joints:
        raise ValueError("no joint appears in both views")
    if n_windows is None:
        horizon = max(
            int(tr.t[-1]) for tr in list(lefts.values()) + list(rights.values()) if len(tr.t)
        )
        n_windows = window_count(horizon, window_us)
    centers = window_centers_us(n_windows, window_us)

    per_joint = np.full((len(joints), n_windows), np.nan)
    for j, joint in enumerate(joints):
        lt, rt = lefts[joint], rights[joint]
        for i, tc in enumerate(centers):
            ul = _interp_visible(lt, tc)
            ur = _interp_visible(rt, tc)
            if ul is not None and ur is not None:
                per_joint[j, i] = ur - ul

    n_vis = np.sum(~np.isnan(per_joint), axis=0)
    if not n_vis.any():
        raise ValueError("no window has a joint visible in both views")
    d_mean = np.full(n_windows, np.nan)
    d_min = np.full(n_windows, np.nan)
    d_max = np.full(n_windows, np.nan)
    got = n_vis > 0
    d_mean[got] = np.nanmean(per_joint[:, got], axis=0)
    d_min[got] = np.nanmin(per_joint[:, got], axis=0)
    d_max[got] = np.nanmax(per_joint[:, got], axis=0)
    return DisparityTrace(
        window_us=window_us,
        d_mean=d_mean,
        d_min=d_min,
        d_max=d_max,
        n_joints=n_vis.astype(np.int64),
        per_joint=per_joint,
        joints=joints,
    )


# ---------------------------------------------------------------- file I/O


def read_marker_csv(path: str) -> list[MarkerTrack3D]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MARKER_CSV_HEADER:
        raise ValueError(f"{path}: expected header '{MARKER_CSV_HEADER}'")
    samples: dict[str, list[tuple[int, float, float, float]]] = {}
    for i, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 5:
            raise ValueError(f"{path}:{i}: expected 5 fields, got {len(fields)}")
        t, joint = int(fields[0]), fields[1]
        samples.setdefault(joint, []).append((t, float(fields[2]), float(fields[3]), float(fields[4])))
    tracks = []
    for joint, rows in samples.items():
        rows.sort(key=lambda r: r[0])
        tracks.append(
            MarkerTrack3D(
                joint=joint,
                t=np.array([r[0] for r in rows], dtype=np.int64),
                xyz=np.array([[r[1], r[2], r[3]] for r in rows], dtype=np.float64),
            )
        )
    tracks.sort(key=lambda tr: tr.joint)
    return tracks


def read_calibration_json(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Calibration file: {"left": 3x4 nested list, "right": 3x4 nested list}."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        return check_projection_matrix(np.array(data["left"])), check_projection_matrix(np.array(data["right"]))
    except KeyError as exc:
        raise ValueError(f"{path}: missing projection matrix {exc}") from None


def write_trace_csv(trace: DisparityTrace, path: str) -> None:
    centers = window_centers_us(trace.n_windows, trace.window_us)
    rows = [TRACE_CSV_HEADER]
    for i in range(trace.n_windows):
        if trace.n_joints[i] > 0:
            rows.append(
                f"{i},{centers[i]:.1f},{float(trace.d_mean[i])!r},{float(trace.d_min[i])!r},"
                f"{float(trace.d_max[i])!r},{trace.n_joints[i]}"
            )
        else:
            rows.append(f"{i},{centers[i]:.1f},,,,0")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    os.replace(tmp, path)


def read_trace_csv(path: str) -> DisparityTrace:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != TRACE_CSV_HEADER:
        raise ValueError(f"{path}: expected header '{TRACE_CSV_HEADER}'")
    n = len(lines) - 1
    if n == 0:
        raise ValueError(f"{path}: empty trace")
    d_mean = np.full(n, np.nan)
    d_min = np.full(n, np.nan)
    d_max = np.full(n, np.nan)
    n_joints = np.zeros(n, dtype=np.int64)
    centers = np.zeros(n)
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != 6:
            raise ValueError(f"{path}:{i + 2}: expected 6 fields")
        centers[i] = float(fields[1])
        if fields[2]:
            d_mean[i] = float(fields[2])
            d_min[i] = float(fields[3])
            d_max[i] = float(fields[4])
            n_joints[i] = int(fields[5])
    window_us = int(round(centers[0] * 2)) if n else 0
    return DisparityTrace(
        window_us=window_us,
        d_mean=d_mean,
        d_min=d_min,
        d_max=d_max,
        n_joints=n_joints,
        per_joint=d_mean.reshape(1, -1).copy(),
        joints=("aggregate",),
    )
