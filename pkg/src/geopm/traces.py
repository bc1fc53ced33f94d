"""GPS trajectory ingestion, speed filtering and query sampling.

Raw GeoLife / T-Drive trajectories record every movement of a user; the
sampler turns them into the much sparser sequence of points at which the
user would actually query a location-based service.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import logging
import math
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence, TextIO

import numpy as np

from geopm.errors import EmptyTrajectoryError, InvalidInputError, InvalidParameterError
from geopm.noise import GeoFix, PlanarPoint, euclid, make_rng, project

log = logging.getLogger(__name__)

# Beijing bounding box (south, west, north, east) and its centroid, used as projection origin
BEIJING_BBOX = (39.4416, 115.4172, 41.0596, 117.5079)
DEFAULT_ORIGIN = GeoFix((BEIJING_BBOX[0] + BEIJING_BBOX[2]) / 2, (BEIJING_BBOX[1] + BEIJING_BBOX[3]) / 2)

SPEED_CAP = 15.0 / 3.6
MAX_FIX_GAP = 600.0
PRIORS = tuple(round(0.1 * i, 1) for i in range(11))

GEOLIFE_HEADER_LINES = 6


@dataclass
class Trajectory:
    user_id: str
    fixes: list[GeoFix]
    skipped: int = 0
    duplicates: int = 0
    reordered: bool = False

    def __len__(self) -> int:
        return len(self.fixes)

    @property
    def times(self) -> list[float]:
        return [f.t for f in self.fixes]


@dataclass
class QueryTrace:
    user_id: str
    points: list[PlanarPoint]
    times: list[float]
    prior_p: float = 0.0
    sample_index: int = 0
    # index into the source trajectory of every emitted point
    fix_indices: list[int] = field(default_factory=list)
    # whether each drawn gap was a jump (includes the draw that ran past the end)
    jumps: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class SamplerConfig:
    speed_cap: float = SPEED_CAP
    brief_interval: float = 60.0
    jump_interval: float = 3600.0
    interval_noise_frac: float = 0.1
    p_jump: float = 0.0
    samples_per_trace: int = 10
    max_fix_gap: float = MAX_FIX_GAP

    def __post_init__(self) -> None:
        if not 0 < self.brief_interval < self.jump_interval:
            raise InvalidParameterError("need 0 < brief_interval < jump_interval")
        if not 0.0 <= self.p_jump <= 1.0:
            raise InvalidParameterError("p_jump must lie in [0, 1]")
        if self.speed_cap <= 0 or self.interval_noise_frac < 0 or self.samples_per_trace < 1:
            raise InvalidParameterError("invalid sampler configuration")


def _finish(user_id: str, fixes: list[GeoFix], skipped: int) -> Trajectory:
    reordered = any(b.t < a.t for a, b in zip(fixes, fixes[1:]))
    if reordered:
        log.warning("%s: timestamps out of order, sorting", user_id)
        fixes = sorted(fixes, key=lambda f: f.t)
    unique: list[GeoFix] = []
    for f in fixes:
        if unique and f.t == unique[-1].t:
            continue
        unique.append(f)
    duplicates = len(fixes) - len(unique)
    if duplicates:
        log.warning("%s: dropped %d fixes with duplicate timestamps", user_id, duplicates)
    if skipped:
        log.warning("%s: skipped %d malformed records", user_id, skipped)
    if len(unique) < 2:
        raise EmptyTrajectoryError(f"{user_id}: fewer than two valid fixes")
    return Trajectory(user_id, unique, skipped, duplicates, reordered)


def _lines(data: bytes | str) -> list[str]:
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    return data.splitlines()


def _utc(text: str, fmt: str) -> float:
    return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc).timestamp()


def parse_geolife(data: bytes | str, user_id: str = "geolife") -> Trajectory:
    """Parse a GeoLife ``.plt`` file: six header lines, then
    ``lat,lon,0,altitude_ft,days,date,time`` records."""
    fixes: list[GeoFix] = []
    skipped = 0
    for line in _lines(data)[GEOLIFE_HEADER_LINES:]:
        if not line.strip():
            continue
        parts = line.strip().split(",")
        try:
            if len(parts) != 7:
                raise ValueError(line)
            t = _utc(f"{parts[5]} {parts[6]}", "%Y-%m-%d %H:%M:%S")
            fixes.append(GeoFix(float(parts[0]), float(parts[1]), t))
        except ValueError:
            skipped += 1
    return _finish(user_id, fixes, skipped)


def parse_tdrive(data: bytes | str, user_id: str | None = None) -> Trajectory:
    """Parse a T-Drive taxi file of ``taxi_id,YYYY-MM-DD HH:MM:SS,lon,lat`` lines."""
    fixes: list[GeoFix] = []
    skipped = 0
    for line in _lines(data):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        try:
            if len(parts) != 4:
                raise ValueError(line)
            if user_id is None:
                user_id = parts[0]
            t = _utc(parts[1], "%Y-%m-%d %H:%M:%S")
            fixes.append(GeoFix(float(parts[3]), float(parts[2]), t))
        except ValueError:
            skipped += 1
    return _finish(user_id or "tdrive", fixes, skipped)


def project_trajectory(traj: Trajectory, origin: GeoFix = DEFAULT_ORIGIN) -> list[PlanarPoint]:
    return [project(f, origin) for f in traj.fixes]


def speed_segments(
    traj: Trajectory,
    cap: float = SPEED_CAP,
    origin: GeoFix | None = None,
    max_gap: float = MAX_FIX_GAP,
) -> list[tuple[int, int]]:
    """Maximal half-open index ranges whose consecutive fixes move slower than ``cap`` (m/s).

    A pair of fixes more than ``max_gap`` seconds apart never joins a segment.
    """
    pts = project_trajectory(traj, origin or traj.fixes[0])
    segments: list[tuple[int, int]] = []
    start = None
    for i in range(len(pts) - 1):
        dt = traj.fixes[i + 1].t - traj.fixes[i].t
        slow = 0 < dt <= max_gap and euclid(pts[i], pts[i + 1]) / dt < cap
        if slow and start is None:
            start = i
        elif not slow and start is not None:
            segments.append((start, i + 1))
            start = None
    if start is not None:
        segments.append((start, len(pts)))
    return segments


def _draw_gap(cfg: SamplerConfig, rng: np.random.Generator) -> tuple[float, bool]:
    jump = bool(rng.random() < cfg.p_jump)
    base = cfg.jump_interval if jump else cfg.brief_interval
    sigma = cfg.interval_noise_frac * base
    noise = 0.0
    if sigma > 0:
        noise = rng.normal(0.0, sigma)
        while abs(noise) > 3 * sigma:
            noise = rng.normal(0.0, sigma)
    return max(base + noise, 1.0), jump


def sample_queries(
    traj: Trajectory,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    origin: GeoFix = DEFAULT_ORIGIN,
    sample_index: int = 0,
) -> QueryTrace:
    """Walk the trajectory emitting query points separated by brief or jump intervals.

    Each query is the real fix nearest in time to the drawn instant; if that
    fix is in a fast stretch, the walk resumes at the next slow segment.
    """
    out = QueryTrace(traj.user_id, [], [], cfg.p_jump, sample_index)
    segments = speed_segments(traj, cfg.speed_cap, origin, cfg.max_fix_gap)
    if not segments:
        return out
    times = traj.times
    n = len(times)
    in_slow = [False] * n
    for s, e in segments:
        for k in range(s, e):
            in_slow[k] = True
    starts = [s for s, _ in segments]

    def emit(k: int) -> None:
        out.points.append(project(traj.fixes[k], origin))
        out.times.append(times[k])
        out.fix_indices.append(k)

    i = starts[0]
    emit(i)
    while True:
        gap, jump = _draw_gap(cfg, rng)
        out.jumps.append(jump)
        target = times[i] + gap
        if target > times[-1]:
            break
        j = bisect.bisect_left(times, target)
        if j > 0 and (j == n or target - times[j - 1] <= times[j] - target):
            j -= 1
        if j <= i:
            j = i + 1
        if j >= n:
            break
        if not in_slow[j]:
            nxt = bisect.bisect_right(starts, j)
            if nxt == len(starts):
                break
            j = starts[nxt]
        emit(j)
        i = j
    return out


def _stream_key(user_id: str) -> int:
    return zlib.crc32(user_id.encode("utf-8"))


def prior_sweep(
    trajectories: Iterable[Trajectory],
    cfg: SamplerConfig,
    master_seed: int,
    priors: Sequence[float] = PRIORS,
    origin: GeoFix = DEFAULT_ORIGIN,
) -> list[QueryTrace]:
    """``samples_per_trace`` samplings of every trajectory for every jump probability."""
    out = []
    for traj in trajectories:
        for pi, p in enumerate(priors):
            pcfg = dataclasses.replace(cfg, p_jump=p)
            for k in range(cfg.samples_per_trace):
                rng = make_rng(master_seed, _stream_key(traj.user_id), pi, k)
                out.append(sample_queries(traj, pcfg, rng, origin, sample_index=k))
    return out


def synth_trace(
    kind: str,
    n: int,
    dt: float,
    rng: np.random.Generator,
    *,
    step_sigma: float = 50.0,
    box: float = 50_000.0,
    start: PlanarPoint = PlanarPoint(0.0, 0.0),
) -> QueryTrace:
    """Synthetic query trace: ``static``, ``random_walk`` (mean step ``step_sigma``) or ``uniform`` in a square ``box``."""
    if n < 1:
        raise InvalidInputError("synthetic trace needs n >= 1")
    if kind == "static":
        pts = [start] * n
    elif kind == "random_walk":
        # per-axis sd so that the mean step length is step_sigma
        scale = step_sigma / math.sqrt(math.pi / 2)
        steps = rng.normal(0.0, scale, size=(n - 1, 2))
        xy = np.vstack([[start], np.asarray(start) + np.cumsum(steps, axis=0)])
        pts = [PlanarPoint(float(a), float(b)) for a, b in xy]
    elif kind == "uniform":
        xy = rng.uniform(0.0, box, size=(n, 2))
        pts = [PlanarPoint(float(a), float(b)) for a, b in xy]
    else:
        raise InvalidParameterError(f"unknown synthetic trace kind {kind!r}")
    return QueryTrace(f"synth-{kind}", pts, [i * dt for i in range(n)])


QUERY_CSV_FIELDS = ["user_id", "prior_p", "sample_index", "t", "x", "y"]
TRAJECTORY_CSV_FIELDS = ["user_id", "t", "lat", "lon"]


def write_query_traces(traces: Iterable[QueryTrace], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(QUERY_CSV_FIELDS)
    for qt in traces:
        for p, t in zip(qt.points, qt.times):
            w.writerow([qt.user_id, repr(qt.prior_p), qt.sample_index, repr(t), repr(p.x), repr(p.y)])


def read_query_traces(src: TextIO) -> list[QueryTrace]:
    """Group rows back into traces, keyed by ``(user_id, prior_p, sample_index)`` in first-seen order."""
    traces: dict[tuple[str, float, int], QueryTrace] = {}
    for row in csv.DictReader(src):
        key = (row["user_id"], float(row["prior_p"]), int(row["sample_index"]))
        qt = traces.get(key)
        if qt is None:
            qt = traces[key] = QueryTrace(key[0], [], [], key[1], key[2])
        qt.points.append(PlanarPoint(float(row["x"]), float(row["y"])))
        qt.times.append(float(row["t"]))
    return list(traces.values())


def write_trajectories(trajs: Iterable[Trajectory], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRAJECTORY_CSV_FIELDS)
    for tr in trajs:
        for f in tr.fixes:
            w.writerow([tr.user_id, repr(f.t), repr(f.lat), repr(f.lon)])


def read_trajectories(src: TextIO) -> list[Trajectory]:
    grouped: dict[str, list[GeoFix]] = {}
    for row in csv.DictReader(src):
        grouped.setdefault(row["user_id"], []).append(
            GeoFix(float(row["lat"]), float(row["lon"]), float(row["t"]))
        )
    return [Trajectory(uid, fixes) for uid, fixes in grouped.items()]

