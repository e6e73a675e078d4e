"""Reproducible interference: co-running task chains, DVFS-like square waves
and per-core speed profiles for the simulator.

A speed multiplier ``m >= 1`` on a core means one second of base work takes
``m`` seconds there. Profiles are piecewise constant in time.
"""
from __future__ import annotations

import bisect
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import PinningError

log = logging.getLogger(__name__)

# Denver cluster max / min frequency on the TX2, MHz
DVFS_HIGH_MHZ, DVFS_LOW_MHZ = 2035, 345
DEFAULT_DVFS_FACTOR = DVFS_HIGH_MHZ / DVFS_LOW_MHZ


@dataclass(frozen=True)
class Segments:
    """Piecewise-constant multiplier; ``starts[0] == 0``.

    With ``period`` set the pattern repeats every ``period`` seconds,
    otherwise the last value holds forever.
    """
    starts: tuple[float, ...]
    values: tuple[float, ...]
    period: float | None = None

    def __post_init__(self):
        if not self.starts or self.starts[0] != 0 or len(self.starts) != len(self.values):
            raise ValueError("segments need starts[0] == 0 and one value per start")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        if any(v <= 0 for v in self.values):
            raise ValueError("speed multipliers must be > 0")
        if self.period is not None and (self.period <= 0 or self.starts[-1] >= self.period):
            raise ValueError("period must exceed the last segment start")

    def _locate(self, t: float) -> tuple[float, int]:
        if self.period is None:
            return 0.0, bisect.bisect_right(self.starts, t) - 1
        k = math.floor(t / self.period)
        base = k * self.period
        idx = bisect.bisect_right(self.starts, t - base) - 1
        return base, max(idx, 0)

    def value(self, t: float) -> float:
        return self.values[self._locate(max(t, 0.0))[1]]

    def next_change(self, t: float) -> float:
        t = max(t, 0.0)
        base, idx = self._locate(t)
        while True:
            if idx + 1 < len(self.starts):
                nxt = base + self.starts[idx + 1]
                idx += 1
            elif self.period is not None:
                base += self.period
                nxt, idx = base, 0
            else:
                return math.inf
            if nxt > t:
                return nxt


class SpeedProfile:
    """Per-core multipliers; several components on a core multiply together."""

    def __init__(self, components: dict[int, list[Segments]] | None = None):
        self.components: dict[int, list[Segments]] = {
            c: list(v) for c, v in (components or {}).items()}

    @classmethod
    def flat(cls) -> "SpeedProfile":
        return cls()

    def combine(self, other: "SpeedProfile") -> "SpeedProfile":
        merged = {c: list(v) for c, v in self.components.items()}
        for c, v in other.components.items():
            merged.setdefault(c, []).extend(v)
        return SpeedProfile(merged)

    __mul__ = combine

    def is_flat(self) -> bool:
        return all(set(s.values) == {1.0} for segs in self.components.values() for s in segs)

    def multiplier(self, core: int, t: float) -> float:
        m = 1.0
        for seg in self.components.get(core, ()):
            m *= seg.value(t)
        return m

    def next_change(self, core: int, t: float) -> float:
        return min((s.next_change(t) for s in self.components.get(core, ())), default=math.inf)

    def finish_time(self, core: int, start: float, work: float) -> float:
        """Time at which ``work`` base-seconds started at ``start`` complete on ``core``."""
        t = start
        remaining = work
        while True:
            m = self.multiplier(core, t)
            nxt = self.next_change(core, t)
            if remaining * m <= nxt - t:
                return t + remaining * m
            remaining -= (nxt - t) / m
            t = nxt

    def work_done(self, core: int, start: float, end: float) -> float:
        """Base-seconds of work completed on ``core`` over ``[start, end]``."""
        t, done = start, 0.0
        while t < end:
            nxt = min(self.next_change(core, t), end)
            done += (nxt - t) / self.multiplier(core, t)
            t = nxt
        return done


def dvfs_profile(period: float, duty: float, slow_factor: float = DEFAULT_DVFS_FACTOR,
                 cores: Iterable[int] = (0, 1)) -> SpeedProfile:
    """Square wave: ``duty * period`` seconds at full speed, then the rest of
    the period slowed by ``slow_factor``, repeating from ``t = 0``."""
    if period <= 0:
        raise ValueError("period must be > 0")
    if not 0 < duty < 1:
        raise ValueError("duty must lie strictly between 0 and 1")
    if slow_factor < 1:
        raise ValueError("slow_factor must be >= 1")
    if slow_factor == 1:
        return SpeedProfile()
    seg = Segments((0.0, duty * period), (1.0, float(slow_factor)), float(period))
    return SpeedProfile({c: [seg] for c in cores})


def corun_profile(core: int, slowdown: float, start: float = 0.0,
                  stop: float = math.inf) -> SpeedProfile:
    """Constant slowdown on one core while a co-runner is active."""
    if slowdown < 1:
        raise ValueError("slowdown must be >= 1")
    if stop <= start or slowdown == 1:
        return SpeedProfile()
    starts, values = [0.0], [1.0]
    if start > 0:
        starts.append(float(start))
        values.append(float(slowdown))
    else:
        values[0] = float(slowdown)
    if math.isfinite(stop):
        starts.append(float(stop))
        values.append(1.0)
    return SpeedProfile({core: [Segments(tuple(starts), tuple(values))]})


class InterferenceKind(Enum):
    NONE = "none"
    CORUN = "corun"
    DVFS = "dvfs"


def _parse_cores(text: str) -> tuple[int, ...]:
    cores = []
    for part in text.replace(";", "+").split("+"):
        if "-" in part:
            a, b = part.split("-")
            cores.extend(range(int(a), int(b) + 1))
        elif part:
            cores.append(int(part))
    return tuple(cores)


@dataclass(frozen=True)
class InterferenceSpec:
    kind: InterferenceKind = InterferenceKind.NONE
    target_cores: tuple[int, ...] = ()
    kernel: str = "matmul"
    period: float = 10.0
    duty: float = 0.5
    slowdown: float = 2.0
    start: float = 0.0
    stop: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "kind", InterferenceKind(self.kind))
        object.__setattr__(self, "target_cores", tuple(self.target_cores))
        if self.kind is InterferenceKind.DVFS and not 0 < self.duty < 1:
            raise ValueError("duty must lie strictly between 0 and 1")
        if self.slowdown < 1:
            raise ValueError("slowdown must be >= 1")
        if self.kind is not InterferenceKind.NONE and not self.target_cores:
            raise ValueError(f"{self.kind.value} interference needs target cores")

    @classmethod
    def parse(cls, text: str) -> "InterferenceSpec":
        """Parse ``none``, ``corun:core=K,kernel=X[,slowdown=F,start=S,stop=S]``
        or ``dvfs:period=S,duty=D,factor=F,cores=A-B``."""
        text = text.strip()
        if text in ("", "none"):
            return cls()
        kind, _, rest = text.partition(":")
        if kind not in ("corun", "dvfs"):
            raise ValueError(f"unknown interference kind {kind!r} (none|corun|dvfs)")
        try:
            opts = dict(kv.split("=", 1) for kv in rest.split(",") if kv)
            if kind == "corun":
                spec = cls(InterferenceKind.CORUN, (int(opts.pop("core", 0)),),
                           kernel=opts.pop("kernel", "matmul"),
                           slowdown=float(opts.pop("slowdown", 2.0)),
                           start=float(opts.pop("start", 0.0)),
                           stop=float(opts.pop("stop", math.inf)))
            else:
                spec = cls(InterferenceKind.DVFS, _parse_cores(opts.pop("cores", "0-1")),
                           period=float(opts.pop("period", 10.0)),
                           duty=float(opts.pop("duty", 0.5)),
                           slowdown=float(opts.pop("factor", DEFAULT_DVFS_FACTOR)),
                           kernel=opts.pop("kernel", "matmul"))
        except ValueError as exc:
            raise ValueError(f"bad interference spec {text!r}: {exc}") from None
        if opts:
            raise ValueError(f"unknown interference option(s): {', '.join(opts)}")
        return spec

    @classmethod
    def from_dict(cls, d: dict | None) -> "InterferenceSpec":
        if not d:
            return cls()
        d = dict(d)
        if "target_cores" in d and isinstance(d["target_cores"], str):
            d["target_cores"] = _parse_cores(d["target_cores"])
        if d.get("stop") is None:
            d["stop"] = math.inf
        return cls(**d)

    def to_profile(self) -> SpeedProfile:
        if self.kind is InterferenceKind.CORUN:
            prof = SpeedProfile()
            for c in self.target_cores:
                prof = prof.combine(corun_profile(c, self.slowdown, self.start, self.stop))
            return prof
        if self.kind is InterferenceKind.DVFS:
            return dvfs_profile(self.period, self.duty, self.slowdown, self.target_cores)
        return SpeedProfile()


def _corun_kernel(kernel: str, tile: int):
    rng = np.random.default_rng(0)
    if kernel == "copy":
        src = rng.standard_normal((1024, 1024))
        dst = np.empty_like(src)
        return lambda: np.copyto(dst, src)
    a, b = rng.standard_normal((tile, tile)), rng.standard_normal((tile, tile))
    c = np.empty_like(a)
    return lambda: np.matmul(a, b, out=c)


@dataclass
class CoRunHandle:
    """Background kernel chain; ``stop()`` takes effect after the current iteration."""
    spec: InterferenceSpec
    threads: list[threading.Thread] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    pinned: bool = True
    _stop: threading.Event = field(default_factory=threading.Event)

    @property
    def active(self) -> bool:
        return any(t.is_alive() for t in self.threads)

    def stop(self, timeout: float | None = 5.0) -> None:
        self._stop.set()
        for t in self.threads:
            t.join(timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def launch_corun(spec: InterferenceSpec, tile: int = 64, strict: bool = True) -> CoRunHandle:
    """Start one pinned co-runner thread per target core.

    With ``strict=False`` a core that cannot be pinned gets an unpinned
    co-runner and a warning instead of :class:`PinningError`.

    ``start``/``stop`` are seconds from launch. DVFS specs are approximated
    by running the kernel only during the slow part of each period.
    """
    handle = CoRunHandle(spec)
    if spec.kind is InterferenceKind.NONE or spec.stop <= spec.start:
        return handle
    can_pin = hasattr(os, "sched_setaffinity")
    allowed = os.sched_getaffinity(0) if can_pin else set()
    for core in spec.target_cores:
        if core not in allowed:
            msg = (f"core {core} not in this process's CPU set {sorted(allowed)}" if can_pin
                   else "thread pinning is not supported on this OS")
            if strict:
                raise PinningError(msg)
            log.warning("co-runner unpinned: %s", msg)
    handle.pinned = all(c in allowed for c in spec.target_cores)
    t0 = time.monotonic()

    def loop(slot: int, core: int):
        if core in allowed:
            os.sched_setaffinity(0, {core})
        step = _corun_kernel(spec.kernel, tile)
        if handle._stop.wait(spec.start):
            return
        while not handle._stop.is_set():
            now = time.monotonic() - t0
            if now >= spec.stop:
                return
            if spec.kind is InterferenceKind.DVFS:
                phase = now % spec.period
                fast_for = spec.duty * spec.period - phase
                if fast_for > 0:
                    handle._stop.wait(min(fast_for, 0.01))
                    continue
            step()
            handle.iterations[slot] += 1

    for i, core in enumerate(spec.target_cores):
        handle.iterations.append(0)
        th = threading.Thread(target=loop, args=(i, core), name=f"corun-{core}", daemon=True)
        handle.threads.append(th)
        th.start()
    return handle
