"""Synthetic stereo stimuli with exact known disparity, plus a brute-force
binocular matching oracle for property-testing the network.

Generation runs on a 1 ms lattice: at each step every active pixel of the
shape draws one Bernoulli emission (probability rate/1000), producing a LEFT
event and its RIGHT twin at x + round(d(t)), each independently jittered by
a clamped seeded Gaussian. The generator also returns the exact disparity
trace evaluated at the analysis window centres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import LEFT, RIGHT, CameraGeometry, StereoEventStream
from .groundtruth import DisparityTrace
from .simulator import window_centers_us, window_count

BAR = "BAR"
DOT = "DOT"
CLOUD = "CLOUD"

LATTICE_US = 1000


@dataclass
class DisparityProfile:
    """Piecewise-linear disparity course plus the stimulus shape.

    ``keyframes`` maps times to disparities in downscaled pixels; between
    keyframes the disparity interpolates linearly and outside their span it
    clamps to the nearest end.
    """

    shape: str = DOT
    keyframes: tuple[tuple[int, float], ...] = ((0, 0.0),)
    x: int = 5  # left-view anchor column
    y: int = 8  # top row of the shape
    height: int = 1  # rows spanned (BAR/CLOUD)
    dots_per_row: int = 3  # CLOUD only
    rate_hz: float = 600.0
    jitter_sigma_us: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shape not in (BAR, DOT, CLOUD):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not self.keyframes:
            raise ValueError("profile needs at least one keyframe")
        if any(self.keyframes[i][0] > self.keyframes[i + 1][0] for i in range(len(self.keyframes) - 1)):
            raise ValueError("keyframes must be time-sorted")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be > 0")
        if self.height < 1 or self.dots_per_row < 1:
            raise ValueError("height and dots_per_row must be >= 1")
        if self.jitter_sigma_us < 0:
            raise ValueError("jitter_sigma_us must be >= 0")

    def d_at(self, t_us: float) -> float:
        ts = [k[0] for k in self.keyframes]
        ds = [k[1] for k in self.keyframes]
        return float(np.interp(t_us, ts, ds))


@dataclass(frozen=True)
class OracleMatch:
    left_index: int
    right_index: int
    dt_us: int  # t_right - t_left
    disparity: int  # x_right - x_left
    y: int


def validate_profile_bounds(profile: DisparityProfile, geometry: CameraGeometry, duration_us: int) -> None:
    """Reject profiles whose shape would leave the frame at any lattice step,
    before any event is generated."""
    rows = range(profile.y, profile.y + (profile.height if profile.shape != DOT else 1))
    if any(y < 0 or y >= geometry.height for y in rows):
        raise ValueError(f"shape rows {list(rows)} outside geometry height {geometry.height}")
    if profile.shape == CLOUD:
        ds = [int(round(d)) for _, d in profile.keyframes]
        lo = max(0, -min(ds))
        hi = geometry.width - 1 - max(0, max(ds))
        if hi - lo + 1 < profile.dots_per_row:
            raise ValueError(
                f"only {max(hi - lo + 1, 0)} columns stay in frame for this disparity "
                f"course, need {profile.dots_per_row}"
            )
        return
    for t in range(0, duration_us, LATTICE_US):
        d = int(round(profile.d_at(t)))
        x = profile.x
        if x < 0 or x >= geometry.width or x + d < 0 or x + d >= geometry.width:
            raise ValueError(
                f"shape leaves the frame at t={t}us (x={x}, d={d}, width={geometry.width})"
            )


def _left_columns(profile: DisparityProfile, geometry: CameraGeometry, rng: np.random.Generator) -> list[int]:
    if profile.shape == CLOUD:
        # sample only columns that keep x + round(d(t)) in frame everywhere;
        # piecewise-linear d attains its extremes at keyframes
        ds = [int(round(d)) for _, d in profile.keyframes]
        lo = max(0, -min(ds))
        hi = geometry.width - 1 - max(0, max(ds))
        valid = hi - lo + 1
        if valid < profile.dots_per_row:
            raise ValueError(
                f"only {valid} columns stay in frame for this disparity course, "
                f"need {profile.dots_per_row}"
            )
        cols = sorted(rng.choice(valid, size=profile.dots_per_row, replace=False).tolist())
        return [int(c) + lo for c in cols]
    return [profile.x]


def gen_stimulus(
    profile: DisparityProfile,
    geometry: CameraGeometry,
    duration_us: int,
    window_us: int,
) -> tuple[StereoEventStream, DisparityTrace]:
    """Generate the stereo stream and its exact ground-truth trace."""
    if duration_us <= 0:
        raise ValueError("duration must be > 0")
    validate_profile_bounds(profile, geometry, duration_us)
    rng = np.random.default_rng(profile.seed)
    rows = list(range(profile.y, profile.y + (profile.height if profile.shape != DOT else 1)))
    cols = _left_columns(profile, geometry, rng)
    steps = range(0, duration_us, LATTICE_US)

    p_emit = min(profile.rate_hz * LATTICE_US * 1e-6, 1.0)
    sigma = profile.jitter_sigma_us
    t_list: list[int] = []
    x_list: list[int] = []
    y_list: list[int] = []
    p_list: list[int] = []
    s_list: list[int] = []

    def jittered(t: int) -> int:
        if sigma == 0:
            return t
        j = rng.normal(0.0, sigma)
        j = max(-3.0 * sigma, min(3.0 * sigma, j))
        return max(0, min(duration_us, t + int(round(j))))

    for t in steps:
        d = int(round(profile.d_at(t)))
        for y in rows:
            for x in cols:
                if p_emit < 1.0 and rng.random() >= p_emit:
                    continue
                pol = int(rng.integers(0, 2))  # twins share the brightness sign
                t_list.append(jittered(t))
                x_list.append(x)
                y_list.append(y)
                p_list.append(pol)
                s_list.append(LEFT)
                t_list.append(jittered(t))
                x_list.append(x + d)
                y_list.append(y)
                p_list.append(pol)
                s_list.append(RIGHT)

    stream = StereoEventStream(
        np.array(t_list, dtype=np.int64),
        np.array(x_list, dtype=np.int32),
        np.array(y_list, dtype=np.int32),
        np.array(p_list, dtype=np.int8),
        np.array(s_list, dtype=np.int8),
        geometry,
    )

    n_windows = window_count(duration_us, window_us)
    centers = window_centers_us(n_windows, window_us)
    d_centers = np.array([profile.d_at(tc) for tc in centers])
    trace = DisparityTrace(
        window_us=window_us,
        d_mean=d_centers.copy(),
        d_min=d_centers.copy(),
        d_max=d_centers.copy(),
        n_joints=np.ones(n_windows, dtype=np.int64),
        per_joint=d_centers.reshape(1, -1).copy(),
        joints=("target",),
    )
    return stream, trace


def oracle_matches(
    stream: StereoEventStream,
    window_us: int,
    analysis_window_us: int,
    n_windows: int | None = None,
) -> tuple[list[OracleMatch], np.ndarray, int]:
    """Exhaustively enumerate binocular matches: every (LEFT, RIGHT) event
    pair with equal y and |dt| <= window is a match.

    Returns (matches, histogram, d_offset): histogram[window, d + d_offset]
    counts matches binned by the midpoint of the pair's timestamps.
    """
    if window_us <= 0:
        raise ValueError("window must be > 0")
    if n_windows is None:
        n_windows = window_count(stream.duration, analysis_window_us)
    w = stream.geometry.width
    d_offset = w - 1
    hist = np.zeros((n_windows, 2 * w - 1), dtype=np.int64)
    matches: list[OracleMatch] = []

    left_idx = np.flatnonzero(stream.side == LEFT)
    right_idx = np.flatnonzero(stream.side == RIGHT)
    by_row_left: dict[int, np.ndarray] = {}
    by_row_right: dict[int, np.ndarray] = {}
    for y in np.unique(stream.y):
        by_row_left[int(y)] = left_idx[stream.y[left_idx] == y]
        by_row_right[int(y)] = right_idx[stream.y[right_idx] == y]

    for y, lids in by_row_left.items():
        rids = by_row_right.get(y)
        if rids is None or len(rids) == 0:
            continue
        rt = stream.t[rids]
        lo_ptr = 0
        hi_ptr = 0
        for li in lids:
            tl = int(stream.t[li])
            while lo_ptr < len(rids) and rt[lo_ptr] < tl - window_us:
                lo_ptr += 1
            if hi_ptr < lo_ptr:
                hi_ptr = lo_ptr
            while hi_ptr < len(rids) and rt[hi_ptr] <= tl + window_us:
                hi_ptr += 1
            for k in range(lo_ptr, hi_ptr):
                ri = int(rids[k])
                dt = int(stream.t[ri]) - tl
                disp = int(stream.x[ri]) - int(stream.x[li])
                matches.append(OracleMatch(int(li), ri, dt, disp, int(y)))
                wi = ((tl + int(stream.t[ri])) // 2) // analysis_window_us
                if 0 <= wi < n_windows:
                    hist[wi, disp + d_offset] += 1
    return matches, hist, d_offset


def oracle_disparity_estimate(hist: np.ndarray, d_offset: int) -> np.ndarray:
    """Count-weighted mean disparity per analysis window; NaN when empty."""
    d_values = np.arange(hist.shape[1], dtype=np.float64) - d_offset
    totals = hist.sum(axis=1)
    out = np.full(hist.shape[0], np.nan)
    nz = totals > 0
    out[nz] = (hist[nz] @ d_values) / totals[nz]
    return out
