"""Per-process counter recording via the kernel perf facility.

Attaches one counter fd per monitored event to a target PID and polls the
cumulative values on a fixed-rate deadline schedule, storing per-interval
deltas.  Events the platform cannot open produce an all-NaN column; when
the kernel multiplexes the 28 events over fewer physical slots the scaled
estimates are accepted and the overall running/enabled ratio per column is
kept as metadata.  Everything runs in user mode (kernel and hypervisor
cycles excluded).

The mem-loads and mem-stores events are dynamic PMU events with no stable
portable encoding, so the built-in table leaves them unmapped and their
columns are recorded as NaN.
"""
from __future__ import annotations

import ctypes
import io
import logging
import os
import platform
import re
import struct
import time
from dataclasses import dataclass

import numpy as np

from .events import EVENT_NAMES
from .samples import RawSample

log = logging.getLogger(__name__)

_PERF_TYPE_HARDWARE = 0
_PERF_TYPE_SOFTWARE = 1
_PERF_TYPE_HW_CACHE = 3

_READ_FORMAT_TOTAL_TIME_ENABLED = 1 << 0
_READ_FORMAT_TOTAL_TIME_RUNNING = 1 << 1

_FLAG_DISABLED = 1 << 0
_FLAG_EXCLUDE_KERNEL = 1 << 5
_FLAG_EXCLUDE_HV = 1 << 6

_IOC_ENABLE = 0x2400
_IOC_DISABLE = 0x2401


def _cache_config(cache_id: int, op: int, result: int) -> int:
    return cache_id | (op << 8) | (result << 16)


_L1D, _LL, _DTLB, _ITLB, _BPU = 0, 2, 3, 4, 5
_READ, _WRITE = 0, 1
_ACCESS, _MISS = 0, 1

# canonical event name -> (perf type, config); None = not portably encodable
EVENT_CODES: dict[str, tuple[int, int] | None] = {
    "branch-instructions": (_PERF_TYPE_HARDWARE, 4),
    "branch-load-misses": (_PERF_TYPE_HW_CACHE, _cache_config(_BPU, _READ, _MISS)),
    "branch-loads": (_PERF_TYPE_HW_CACHE, _cache_config(_BPU, _READ, _ACCESS)),
    "branch-misses": (_PERF_TYPE_HARDWARE, 5),
    "bus-cycles": (_PERF_TYPE_HARDWARE, 6),
    "cache-misses": (_PERF_TYPE_HARDWARE, 3),
    "cache-references": (_PERF_TYPE_HARDWARE, 2),
    "context-switches": (_PERF_TYPE_SOFTWARE, 3),
    "cpu-migrations": (_PERF_TYPE_SOFTWARE, 4),
    "dTLB-load-misses": (_PERF_TYPE_HW_CACHE, _cache_config(_DTLB, _READ, _MISS)),
    "dTLB-loads": (_PERF_TYPE_HW_CACHE, _cache_config(_DTLB, _READ, _ACCESS)),
    "dTLB-store-misses": (_PERF_TYPE_HW_CACHE, _cache_config(_DTLB, _WRITE, _MISS)),
    "dTLB-stores": (_PERF_TYPE_HW_CACHE, _cache_config(_DTLB, _WRITE, _ACCESS)),
    "instructions": (_PERF_TYPE_HARDWARE, 1),
    "iTLB-load-misses": (_PERF_TYPE_HW_CACHE, _cache_config(_ITLB, _READ, _MISS)),
    "iTLB-loads": (_PERF_TYPE_HW_CACHE, _cache_config(_ITLB, _READ, _ACCESS)),
    "L1-dcache-load-misses": (_PERF_TYPE_HW_CACHE, _cache_config(_L1D, _READ, _MISS)),
    "L1-dcache-loads": (_PERF_TYPE_HW_CACHE, _cache_config(_L1D, _READ, _ACCESS)),
    "L1-dcache-stores": (_PERF_TYPE_HW_CACHE, _cache_config(_L1D, _WRITE, _ACCESS)),
    "LLC-load-misses": (_PERF_TYPE_HW_CACHE, _cache_config(_LL, _READ, _MISS)),
    "LLC-loads": (_PERF_TYPE_HW_CACHE, _cache_config(_LL, _READ, _ACCESS)),
    "LLC-store-misses": (_PERF_TYPE_HW_CACHE, _cache_config(_LL, _WRITE, _MISS)),
    "LLC-stores": (_PERF_TYPE_HW_CACHE, _cache_config(_LL, _WRITE, _ACCESS)),
    "mem-loads": None,
    "mem-stores": None,
    "page-faults": (_PERF_TYPE_SOFTWARE, 2),
    "ref-cycles": (_PERF_TYPE_HARDWARE, 9),
    "task-clock": (_PERF_TYPE_SOFTWARE, 1),
}

_SYSCALL_NR = {"x86_64": 298, "aarch64": 241, "riscv64": 241}


class SamplerError(Exception):
    """Recording could not start or produced nothing."""


class CounterAccessError(SamplerError):
    """The kernel refuses unprivileged counter access."""


class ProcessVanishedError(SamplerError):
    """Target PID disappeared before any reading was taken."""


class _PerfEventAttr(ctypes.Structure):
    # minimal prefix of the kernel struct; older sizes are accepted
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
    ]


_libc = ctypes.CDLL(None, use_errno=True)


def _read_text(path: str) -> str:
    with open(path) as fh:
        return fh.read().strip()


def perf_paranoid_level() -> int | None:
    try:
        return int(_read_text("/proc/sys/kernel/perf_event_paranoid"))
    except (OSError, ValueError):
        return None


def _open_counter(perf_type: int, config: int, pid: int) -> int:
    nr = _SYSCALL_NR.get(platform.machine())
    if nr is None:
        raise CounterAccessError(f"no perf syscall number for {platform.machine()}")
    attr = _PerfEventAttr()
    attr.type = perf_type
    attr.size = ctypes.sizeof(_PerfEventAttr)
    attr.config = config
    attr.read_format = _READ_FORMAT_TOTAL_TIME_ENABLED | _READ_FORMAT_TOTAL_TIME_RUNNING
    attr.flags = _FLAG_DISABLED | _FLAG_EXCLUDE_KERNEL | _FLAG_EXCLUDE_HV
    fd = _libc.syscall(nr, ctypes.byref(attr), pid, -1, -1, 0)
    if fd < 0:
        raise OSError(ctypes.get_errno(), os.strerror(ctypes.get_errno()))
    return fd


@dataclass(frozen=True)
class SamplerConfig:
    pid: int
    rate_hz: float = 10.0
    duration_s: float = 30.0
    events: tuple[str, ...] = EVENT_NAMES
    warmup_s: float = 0.0
    check_paranoid: bool = True

    def __post_init__(self):
        if self.rate_hz <= 0 or self.duration_s <= 0:
            raise ValueError("rate_hz and duration_s must be positive")
        if not self.events or len(set(self.events)) != len(self.events):
            raise ValueError("events must be non-empty and duplicate-free")
        unknown = [e for e in self.events if e not in EVENT_CODES]
        if unknown:
            raise ValueError(f"unknown events: {unknown}")
        if self.warmup_s < 0:
            raise ValueError("warmup must be >= 0")


def machine_id() -> str:
    """Stable identifier of the host CPU model (profiles do not transfer
    across processors, so bundles carry this)."""
    try:
        text = _read_text("/proc/cpuinfo")
        match = re.search(r"^model name\s*:\s*(.+)$", text, re.MULTILINE)
        if match:
            slug = re.sub(r"[^A-Za-z0-9]+", "-", match.group(1)).strip("-").lower()
            return slug or platform.machine()
    except OSError:
        pass
    return platform.machine() or "unknown"


class _Counter:
    """One open perf fd with its cumulative scaled value."""

    __slots__ = ("column", "fd", "fileobj", "value", "enabled", "running", "buf")

    def __init__(self, column: int, fd: int):
        self.column = column
        self.fd = fd
        self.fileobj = io.FileIO(fd, "rb", closefd=False)
        self.value = 0.0
        self.enabled = 0
        self.running = 0
        self.buf = bytearray(24)

    def read_scaled(self) -> float:
        """Cumulative count scaled for multiplexing; NaN while unscheduled."""
        self.fileobj.seek(0)
        if self.fileobj.readinto(self.buf) != 24:
            return float("nan")
        raw, enabled, running = struct.unpack_from("<QQQ", self.buf)
        self.enabled, self.running = enabled, running
        if running == 0:
            return float("nan") if raw == 0 else float(raw)
        self.value = raw * (enabled / running)
        return self.value

    def close(self):
        self.fileobj.close()
        os.close(self.fd)


def _pid_alive(pid: int) -> bool:
    return os.path.exists(f"/proc/{pid}")


def record(config: SamplerConfig) -> RawSample:
    """Record the configured events for one process into a RawSample.

    Raises CounterAccessError when the kernel denies counters outright and
    ProcessVanishedError when the PID is gone before the first reading; a
    PID lost mid-recording yields a shorter sample flagged truncated.
    """
    if not _pid_alive(config.pid):
        raise ProcessVanishedError(f"pid {config.pid} does not exist")
    if config.check_paranoid and os.geteuid() != 0:
        level = perf_paranoid_level()
        if level is not None and level > 2:
            raise CounterAccessError(
                f"kernel.perf_event_paranoid={level} blocks unprivileged counters; "
                "lower it (sysctl kernel.perf_event_paranoid=2) or run privileged"
            )

    counters: list[_Counter] = []
    nan_columns: list[int] = []
    try:
        for column, name in enumerate(config.events):
            code = EVENT_CODES[name]
            if code is None:
                nan_columns.append(column)
                continue
            try:
                fd = _open_counter(code[0], code[1], config.pid)
            except OSError as exc:
                log.debug("event %s unavailable: %s", name, exc)
                nan_columns.append(column)
                continue
            counters.append(_Counter(column, fd))
        if not counters:
            raise CounterAccessError("no counters available for this process")

        for counter in counters:
            if _libc.ioctl(counter.fd, _IOC_ENABLE, 0) != 0:
                raise CounterAccessError("failed to enable counters")

        if config.warmup_s:
            time.sleep(config.warmup_s)

        rows = int(round(config.rate_hz * config.duration_s))
        interval = 1.0 / config.rate_hz
        readings = np.full((rows, len(config.events)), np.nan)
        timestamps = np.zeros(rows, dtype=np.int64)

        previous = {c.column: c.read_scaled() for c in counters}
        start = time.monotonic()
        epoch_offset_ms = time.time() * 1000.0 - start * 1000.0
        last_ms = 0
        recorded = 0
        for i in range(rows):
            deadline = start + (i + 1) * interval
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            lag = time.monotonic() - deadline
            if lag > 0.1 * interval:
                log.warning("tick %d late by %.1f%% of the interval", i, 100 * lag / interval)
            for counter in counters:
                now_value = counter.read_scaled()
                before = previous[counter.column]
                previous[counter.column] = now_value
                if np.isnan(now_value) or np.isnan(before):
                    continue
                readings[i, counter.column] = max(now_value - before, 0.0)
            tick_ms = int(time.monotonic() * 1000.0 + epoch_offset_ms)
            last_ms = max(tick_ms, last_ms + 1)  # keep strictly increasing
            timestamps[i] = last_ms
            recorded = i + 1
            if not _pid_alive(config.pid):
                break
    finally:
        for counter in counters:
            _libc.ioctl(counter.fd, _IOC_DISABLE, 0)
            counter.close()

    if recorded == 0:
        raise ProcessVanishedError(f"pid {config.pid} vanished before the first reading")
    truncated = recorded < rows
    scales = np.zeros(len(config.events))
    for counter in counters:
        scales[counter.column] = counter.running / counter.enabled if counter.enabled else 0.0
    return RawSample(
        readings=readings[:recorded],
        timestamps_ms=timestamps[:recorded],
        rate_hz=config.rate_hz,
        duration_s=recorded / config.rate_hz if truncated else config.duration_s,
        pid=config.pid,
        machine_id=machine_id(),
        program_id=_program_name(config.pid),
        truncated=truncated,
        column_scales=scales,
        event_names=config.events,
    )


def _program_name(pid: int) -> str:
    try:
        name = _read_text(f"/proc/{pid}/comm")
        slug = re.sub(r"\s+", "-", name)
        return slug or "unknown"
    except OSError:
        return "unknown"


def counters_available() -> bool:
    """Probe whether this host lets us open a counter on ourselves."""
    code = EVENT_CODES["task-clock"]
    try:
        fd = _open_counter(code[0], code[1], os.getpid())
    except OSError:
        return False
    except CounterAccessError:
        return False
    os.close(fd)
    return True


# --- process candidates ---------------------------------------------------------

@dataclass(frozen=True)
class ProcessCandidate:
    pid: int
    command: str
    cpu_share: float

    def __post_init__(self):
        if not 0.0 <= self.cpu_share <= 1.0:
            raise ValueError("cpu_share must be in [0, 1]")


def _total_jiffies() -> int:
    line = _read_text("/proc/stat").splitlines()[0]
    return sum(int(v) for v in line.split()[1:])


def _pid_jiffies(pid: int) -> int | None:
    try:
        stat = _read_text(f"/proc/{pid}/stat")
    except OSError:
        return None
    # the command field may contain spaces; fields resume after the last ')'
    rest = stat.rsplit(")", 1)[1].split()
    utime, stime = int(rest[11]), int(rest[12])
    return utime + stime


def list_candidates(top_n: int, interval_s: float = 0.2) -> list[ProcessCandidate]:
    """Busiest processes by recent CPU share, our own PID excluded.

    Equal shares order by ascending PID; at most top_n entries.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    try:
        total0 = _total_jiffies()
    except (OSError, IndexError, ValueError) as exc:
        raise SamplerError(f"cannot read the process table: {exc}") from exc
    pids = [int(p) for p in os.listdir("/proc") if p.isdigit()]
    before = {pid: j for pid in pids if (j := _pid_jiffies(pid)) is not None}
    time.sleep(interval_s)
    total1 = _total_jiffies()
    total_delta = max(total1 - total0, 1)

    me = os.getpid()
    candidates = []
    for pid, j0 in before.items():
        if pid == me:
            continue
        j1 = _pid_jiffies(pid)
        if j1 is None:
            continue
        share = min(max((j1 - j0) / total_delta, 0.0), 1.0)
        candidates.append(ProcessCandidate(pid=pid, command=_program_name(pid), cpu_share=share))
    candidates.sort(key=lambda c: (-c.cpu_share, c.pid))
    return candidates[:top_n]
