"""Route description and spatial discretization.

A journey is described by a :class:`TrackProfile` (length, Davis resistance
coefficients, sampled gradients, sampled speed limits, stations) plus a
:class:`JourneySpec` (target time, boundary states). :func:`build_grid` turns
a profile into a :class:`SpatialGrid` of consecutive intervals over which the
optimizer works with one decision per interval.

Station dwells are emulated by inserting a fictitious "stop interval" at the
station position whose width equals ``dwell * sqrt(stop_speed_sq)``; holding
the squared speed at ``stop_speed_sq`` across that interval then charges
exactly the dwell time to the journey clock while the train is practically
stationary.

Track files use a small line-oriented text format::

    ## comment lines start with two hashes
    length_m=10000
    davis_a=2500
    davis_b=40
    davis_c=6
    #gradients pos_m,theta_rad
    0,0.0
    5000,0.005
    #limits pos_m,vmax_mps
    0,25
    #stations pos_m,dwell_s
    10000,30

The key/value block must come first. Unknown keys and unknown section
headers are rejected. Gradients may be omitted (flat track); at least one
speed limit sample is required.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TrackFormatError

_KEY_NAMES = ("length_m", "davis_a", "davis_b", "davis_c")
_SECTION_HEADERS = {
    "#gradients pos_m,theta_rad": "gradients",
    "#limits pos_m,vmax_mps": "limits",
    "#stations pos_m,dwell_s": "stations",
}


@dataclass(frozen=True)
class TrackProfile:
    """Static route data.

    Attributes:
        length: Track length in m.
        davis_a: Constant resistance term in N.
        davis_b: Speed-proportional resistance term in N/(m/s).
        davis_c: Squared-speed resistance term in N/(m/s)^2.
        gradients: Tuple of ``(position_m, angle_rad)`` samples, strictly
            increasing in position. May be empty (flat track).
        speed_limits: Tuple of ``(position_m, limit_mps)`` samples, strictly
            increasing in position. Must be non-empty.
        stations: Tuple of ``(position_m, dwell_s)`` stops, strictly
            increasing in position. May be empty.
    """

    length: float
    davis_a: float
    davis_b: float
    davis_c: float
    gradients: tuple[tuple[float, float], ...] = ()
    speed_limits: tuple[tuple[float, float], ...] = ()
    stations: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if not (self.length > 0.0) or not math.isfinite(self.length):
            raise TrackFormatError(f"track length must be positive, got {self.length}")
        if self.davis_a < 0.0 or self.davis_c < 0.0:
            raise TrackFormatError(
                f"davis_a and davis_c must be nonnegative, got a={self.davis_a} c={self.davis_c}"
            )
        if not self.speed_limits:
            raise TrackFormatError("at least one speed limit sample is required")
        for name, samples in (
            ("gradient", self.gradients),
            ("speed limit", self.speed_limits),
            ("station", self.stations),
        ):
            prev = -math.inf
            for pos, val in samples:
                if not (0.0 <= pos <= self.length):
                    raise TrackFormatError(
                        f"{name} position {pos} outside track [0, {self.length}]"
                    )
                if pos <= prev:
                    raise TrackFormatError(
                        f"{name} positions must be strictly increasing ({prev} then {pos})"
                    )
                prev = pos
        for pos, limit in self.speed_limits:
            if not (limit > 0.0):
                raise TrackFormatError(f"speed limit at {pos} m must be positive, got {limit}")
        for pos, dwell in self.stations:
            if dwell < 0.0:
                raise TrackFormatError(f"station dwell at {pos} m must be nonnegative, got {dwell}")


@dataclass(frozen=True)
class JourneySpec:
    """Boundary conditions and timing target for one journey.

    Attributes:
        target_time: Required total journey time in s (dwells included).
        initial_speed_sq: Squared speed at the first node, m^2/s^2.
        initial_soc: Battery state of charge at departure, fraction in (0, 1).
        initial_temp: Battery temperature at departure, K.
        stop_speed_sq: Squared crawl speed held across stop intervals.
        min_speed: Global speed floor in m/s. Defaults to
            ``sqrt(stop_speed_sq)`` so stop intervals sit exactly on the floor.
    """

    target_time: float
    initial_speed_sq: float
    initial_soc: float
    initial_temp: float
    stop_speed_sq: float = 0.01
    min_speed: float | None = None

    def __post_init__(self) -> None:
        if not (self.target_time > 0.0):
            raise TrackFormatError(f"target_time must be positive, got {self.target_time}")
        if not (0.0 < self.initial_soc < 1.0):
            raise TrackFormatError(f"initial_soc must lie in (0,1), got {self.initial_soc}")
        if self.initial_temp <= 0.0:
            raise TrackFormatError(f"initial_temp must be positive, got {self.initial_temp}")
        if not (self.stop_speed_sq > 0.0):
            raise TrackFormatError(f"stop_speed_sq must be positive, got {self.stop_speed_sq}")
        if self.min_speed is None:
            object.__setattr__(self, "min_speed", math.sqrt(self.stop_speed_sq))
        if self.min_speed <= 0.0:
            raise TrackFormatError(f"min_speed must be positive, got {self.min_speed}")
        if self.stop_speed_sq > self.min_speed**2 + 1e-12:
            raise TrackFormatError(
                "stop_speed_sq must not exceed min_speed^2 "
                f"({self.stop_speed_sq} > {self.min_speed**2})"
            )
        if self.initial_speed_sq < 0.0:
            raise TrackFormatError(
                f"initial_speed_sq must be nonnegative, got {self.initial_speed_sq}"
            )


@dataclass(frozen=True)
class GridInterval:
    """One spatial interval of the discretized journey.

    ``start`` is the physical track position of the interval's entry node.
    For stop intervals the width is fictitious (``dwell * sqrt(stop_speed_sq)``)
    and ``start`` repeats the station position.
    """

    start: float
    width: float
    gradient: float
    speed_limit: float
    is_stop: bool = False
    dwell: float = 0.0


@dataclass(frozen=True)
class SpatialGrid:
    """Ordered intervals covering the journey, stops included."""

    intervals: tuple[GridInterval, ...]
    stop_speed_sq: float
    base_step: float

    @property
    def n(self) -> int:
        return len(self.intervals)

    def widths(self) -> np.ndarray:
        return np.array([iv.width for iv in self.intervals])

    def gradients(self) -> np.ndarray:
        return np.array([iv.gradient for iv in self.intervals])

    def limits(self) -> np.ndarray:
        return np.array([iv.speed_limit for iv in self.intervals])

    def stop_mask(self) -> np.ndarray:
        return np.array([iv.is_stop for iv in self.intervals], dtype=bool)

    def dwells(self) -> np.ndarray:
        return np.array([iv.dwell for iv in self.intervals])

    def starts(self) -> np.ndarray:
        return np.array([iv.start for iv in self.intervals])

    def running_length(self) -> float:
        return float(sum(iv.width for iv in self.intervals if not iv.is_stop))

    def ends_at_stop(self) -> bool:
        return bool(self.intervals) and self.intervals[-1].is_stop


def gradient_at(grid: SpatialGrid, i: int) -> float:
    """Gradient angle (rad) assigned to interval ``i``."""
    if not (0 <= i < grid.n):
        raise IndexError(f"interval index {i} outside grid of {grid.n} intervals")
    return grid.intervals[i].gradient


def load_track(path: str) -> TrackProfile:
    """Parse a track file. Raises :class:`TrackFormatError` with line context."""
    keys: dict[str, float] = {}
    sections: dict[str, list[tuple[float, float]]] = {
        "gradients": [],
        "limits": [],
        "stations": [],
    }
    current: str | None = None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise TrackFormatError(f"cannot read track file {path!r}: {exc}") from exc

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("##"):
            continue
        if line.startswith("#"):
            norm = " ".join(line.split())
            if norm not in _SECTION_HEADERS:
                raise TrackFormatError(f"{path}:{lineno}: unknown section header {line!r}")
            current = _SECTION_HEADERS[norm]
            continue
        if current is None:
            if "=" not in line:
                raise TrackFormatError(
                    f"{path}:{lineno}: expected key=value before first section, got {line!r}"
                )
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _KEY_NAMES:
                raise TrackFormatError(f"{path}:{lineno}: unknown key {key!r}")
            if key in keys:
                raise TrackFormatError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                keys[key] = float(val)
            except ValueError as exc:
                raise TrackFormatError(
                    f"{path}:{lineno}: value for {key!r} is not a number: {val!r}"
                ) from exc
        else:
            parts = line.split(",")
            if len(parts) != 2:
                raise TrackFormatError(
                    f"{path}:{lineno}: expected two comma-separated numbers, got {line!r}"
                )
            try:
                pair = (float(parts[0]), float(parts[1]))
            except ValueError as exc:
                raise TrackFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from exc
            sections[current].append(pair)

    missing = [k for k in _KEY_NAMES if k not in keys]
    if missing:
        raise TrackFormatError(f"{path}: missing required keys: {', '.join(missing)}")
    return TrackProfile(
        length=keys["length_m"],
        davis_a=keys["davis_a"],
        davis_b=keys["davis_b"],
        davis_c=keys["davis_c"],
        gradients=tuple(sections["gradients"]),
        speed_limits=tuple(sections["limits"]),
        stations=tuple(sections["stations"]),
    )


def _nearest_sample(samples: tuple[tuple[float, float], ...], x: float, default: float) -> float:
    # Nearest sample by position; ties resolve to the earlier sample.
    if not samples:
        return default
    pos = [p for p, _ in samples]
    idx = int(np.searchsorted(pos, x))
    if idx == 0:
        return samples[0][1]
    if idx == len(samples):
        return samples[-1][1]
    before, after = samples[idx - 1], samples[idx]
    if (x - before[0]) <= (after[0] - x):
        return before[1]
    return after[1]


def _halving_ladder(width: float, min_step: float) -> list[float]:
    # Split a width into descending halves [w/2, w/4, ..., m, m] summing
    # exactly to the original width; used to refine the grid next to stations.
    if width / 2.0 < min_step:
        return [width]
    pieces: list[float] = []
    rem = width
    while rem / 2.0 >= min_step:
        rem /= 2.0
        pieces.append(rem)
    pieces.append(rem)
    return pieces


def _chop_segment(
    seg_len: float,
    base_step: float,
    min_step: float,
    approach_len: float,
    approach_step: float,
    starts_at_station: bool,
    ends_at_station: bool,
    refine: bool,
) -> list[float]:
    if seg_len <= 1e-9 * base_step:
        return []
    eps = 1e-9 * base_step
    if not refine:
        starts_at_station = ends_at_station = False
    # Allocate the stop-approach band first (braking accuracy), then the
    # departure ladder, then fill the middle with base cells.
    tail_alloc = min(approach_len, seg_len) if ends_at_station else 0.0
    head_alloc = min(base_step, seg_len - tail_alloc) if starts_at_station else 0.0
    if head_alloc < eps:
        head_alloc = 0.0

    widths: list[float] = []
    if head_alloc > 0.0:
        ladder = _halving_ladder(head_alloc, min_step)
        ladder.reverse()
        widths.extend(ladder)

    middle = seg_len - head_alloc - tail_alloc
    n_full = int(math.floor(middle / base_step + eps))
    widths.extend([base_step] * n_full)
    leftover = middle - n_full * base_step
    if leftover > eps:
        widths.append(leftover)

    if tail_alloc > 0.0:
        n_app = int(math.floor(tail_alloc / approach_step + eps))
        rem = tail_alloc - n_app * approach_step
        # The irregular cell sits farthest from the stop; the cell touching
        # the station splits into the halving ladder.
        if n_app == 0:
            widths.extend(_halving_ladder(rem, min_step))
        else:
            if rem > eps:
                widths.append(rem)
            widths.extend([approach_step] * (n_app - 1))
            widths.extend(_halving_ladder(approach_step, min_step))
    return widths


def build_grid(
    track: TrackProfile,
    base_step: float,
    *,
    stop_speed_sq: float = 0.01,
    refine_near_stations: bool = True,
    min_step: float | None = None,
    approach_len: float | None = None,
    approach_step: float | None = None,
) -> SpatialGrid:
    """Discretize a track into consecutive spatial intervals.

    Running intervals have width ``base_step`` (the last one in each
    inter-station segment is truncated). The final ``approach_len`` meters
    before each stop (default ``6 * base_step``) are gridded at
    ``approach_step`` (default ``base_step / 4``), and the cell touching the
    station splits further into a halving ladder down to ``min_step``
    (default ``base_step / 32``). Braking concentrates there, and the
    per-interval force balance charges drag at the interval's own speed, so
    wide cells under a steep speed change would bias the model; the band
    keeps that bias negligible. Station departures get the mirrored ladder
    over one base cell. Each station then contributes one fictitious stop
    interval of width ``dwell * sqrt(stop_speed_sq)``.

    Gradient and speed limit for each interval are sampled at the interval
    midpoint with nearest-sample lookup (ties resolve to the earlier
    sample); stop intervals sample at the station position.
    """
    if base_step <= 0.0:
        raise TrackFormatError(f"base_step must be positive, got {base_step}")
    if base_step > track.length:
        raise TrackFormatError(
            f"base_step {base_step} exceeds track length {track.length}"
        )
    if stop_speed_sq <= 0.0:
        raise TrackFormatError(f"stop_speed_sq must be positive, got {stop_speed_sq}")
    if min_step is None:
        min_step = base_step / 32.0
    if min_step <= 0.0 or min_step > base_step:
        raise TrackFormatError(f"min_step must lie in (0, base_step], got {min_step}")
    if approach_len is None:
        approach_len = 6.0 * base_step
    if approach_step is None:
        approach_step = base_step / 4.0
    if approach_len < 0.0:
        raise TrackFormatError(f"approach_len must be nonnegative, got {approach_len}")
    if not (min_step <= approach_step <= base_step):
        raise TrackFormatError(
            f"approach_step must lie in [min_step, base_step], got {approach_step}"
        )

    boundaries = [0.0] + [p for p, _ in track.stations if p < track.length] + [track.length]
    # Stations at the exact track end do not open a trailing segment.
    stations_by_pos = {p: d for p, d in track.stations}

    intervals: list[GridInterval] = []
    v_stop = math.sqrt(stop_speed_sq)
    for k in range(len(boundaries) - 1):
        a, b = boundaries[k], boundaries[k + 1]
        starts_at_station = a in stations_by_pos
        ends_at_station = (b in stations_by_pos) or (
            b == track.length and track.length in stations_by_pos
        )
        widths = _chop_segment(
            b - a, base_step, min_step, approach_len, approach_step,
            starts_at_station, ends_at_station, refine_near_stations,
        )
        pos = a
        for w in widths:
            mid = pos + 0.5 * w
            intervals.append(
                GridInterval(
                    start=pos,
                    width=w,
                    gradient=_nearest_sample(track.gradients, mid, 0.0),
                    speed_limit=_nearest_sample(track.speed_limits, mid, math.inf),
                )
            )
            pos += w
        if b in stations_by_pos:
            dwell = stations_by_pos[b]
            if dwell > 0.0:
                intervals.append(
                    GridInterval(
                        start=b,
                        width=dwell * v_stop,
                        gradient=_nearest_sample(track.gradients, b, 0.0),
                        speed_limit=_nearest_sample(track.speed_limits, b, math.inf),
                        is_stop=True,
                        dwell=dwell,
                    )
                )
    # A station at position 0 contributes its stop interval before anything else.
    if 0.0 in stations_by_pos and stations_by_pos[0.0] > 0.0:
        dwell = stations_by_pos[0.0]
        intervals.insert(
            0,
            GridInterval(
                start=0.0,
                width=dwell * v_stop,
                gradient=_nearest_sample(track.gradients, 0.0, 0.0),
                speed_limit=_nearest_sample(track.speed_limits, 0.0, math.inf),
                is_stop=True,
                dwell=dwell,
            ),
        )
    return SpatialGrid(
        intervals=tuple(intervals), stop_speed_sq=stop_speed_sq, base_step=base_step
    )


def min_time_estimate(grid: SpatialGrid) -> float:
    """Lower bound on the modeled journey time.

    Interval time is charged at the arrival speed, so an interval whose exit
    node is pinned to the crawl speed by a following stop costs at least
    ``width / sqrt(stop_speed_sq)`` regardless of the posted limit. Stop
    intervals contribute their dwell.
    """
    v_stop = math.sqrt(grid.stop_speed_sq)
    t = 0.0
    for i, iv in enumerate(grid.intervals):
        if iv.is_stop:
            t += iv.dwell
        else:
            pinned = i + 1 < grid.n and grid.intervals[i + 1].is_stop
            t += iv.width / (min(iv.speed_limit, v_stop) if pinned else iv.speed_limit)
    return t
