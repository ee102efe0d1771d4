"""Canonical table of the 28 monitored counter events.

Every sample matrix, CSV header and feature-vector slot uses the column
order fixed here, so the tuple below is load-bearing: do not reorder.
"""
from __future__ import annotations

from dataclasses import dataclass

HARDWARE = "hardware"
SOFTWARE = "software"
HARDWARE_CACHE = "hardware-cache"

CATEGORIES = (HARDWARE, SOFTWARE, HARDWARE_CACHE)


@dataclass(frozen=True)
class EventKind:
    """One monitored event: its counter name, category and canonical column."""

    name: str
    category: str
    index: int


_TABLE = (
    ("branch-instructions", HARDWARE),
    ("branch-load-misses", HARDWARE),
    ("branch-loads", HARDWARE),
    ("branch-misses", HARDWARE),
    ("bus-cycles", HARDWARE),
    ("cache-misses", HARDWARE_CACHE),
    ("cache-references", HARDWARE_CACHE),
    ("context-switches", SOFTWARE),
    ("cpu-migrations", SOFTWARE),
    ("dTLB-load-misses", HARDWARE_CACHE),
    ("dTLB-loads", HARDWARE_CACHE),
    ("dTLB-store-misses", HARDWARE_CACHE),
    ("dTLB-stores", HARDWARE_CACHE),
    ("instructions", HARDWARE),
    ("iTLB-load-misses", HARDWARE_CACHE),
    ("iTLB-loads", HARDWARE_CACHE),
    ("L1-dcache-load-misses", HARDWARE_CACHE),
    ("L1-dcache-loads", HARDWARE_CACHE),
    ("L1-dcache-stores", HARDWARE_CACHE),
    ("LLC-load-misses", HARDWARE_CACHE),
    ("LLC-loads", HARDWARE_CACHE),
    ("LLC-store-misses", HARDWARE_CACHE),
    ("LLC-stores", HARDWARE_CACHE),
    ("mem-loads", HARDWARE_CACHE),
    ("mem-stores", HARDWARE_CACHE),
    ("page-faults", SOFTWARE),
    ("ref-cycles", HARDWARE),
    ("task-clock", SOFTWARE),
)

EVENTS: tuple[EventKind, ...] = tuple(
    EventKind(name, category, index) for index, (name, category) in enumerate(_TABLE)
)
EVENT_NAMES: tuple[str, ...] = tuple(e.name for e in EVENTS)
EVENT_INDEX: dict[str, int] = {e.name: e.index for e in EVENTS}
N_EVENTS = len(EVENTS)


def event_by_name(name: str) -> EventKind:
    try:
        return EVENTS[EVENT_INDEX[name]]
    except KeyError:
        raise KeyError(f"unknown counter event {name!r}") from None
