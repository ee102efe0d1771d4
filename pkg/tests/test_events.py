from minerwatch.events import (
    CATEGORIES,
    EVENT_INDEX,
    EVENT_NAMES,
    EVENTS,
    HARDWARE,
    HARDWARE_CACHE,
    N_EVENTS,
    SOFTWARE,
    event_by_name,
)


def test_exactly_28_distinct_events():
    assert N_EVENTS == 28
    assert len(set(EVENT_NAMES)) == 28


def test_indices_are_a_bijection_onto_range():
    assert sorted(e.index for e in EVENTS) == list(range(28))
    for e in EVENTS:
        assert EVENTS[e.index] is e


def test_known_spellings_and_columns():
    assert EVENT_NAMES[0] == "branch-instructions"
    assert EVENT_NAMES[13] == "instructions"
    assert EVENT_NAMES[14] == "iTLB-load-misses"
    assert EVENT_NAMES[27] == "task-clock"
    assert EVENT_INDEX["L1-dcache-load-misses"] == 16


def test_category_assignment():
    by_category = {c: [] for c in CATEGORIES}
    for e in EVENTS:
        by_category[e.category].append(e.name)
    assert sorted(by_category[HARDWARE]) == sorted([
        "branch-instructions", "branch-load-misses", "branch-loads",
        "branch-misses", "bus-cycles", "instructions", "ref-cycles",
    ])
    assert sorted(by_category[SOFTWARE]) == sorted([
        "context-switches", "cpu-migrations", "page-faults", "task-clock",
    ])
    assert len(by_category[HARDWARE_CACHE]) == 17


def test_lookup_by_name():
    assert event_by_name("instructions").index == 13
    try:
        event_by_name("no-such-event")
    except KeyError as exc:
        assert "no-such-event" in str(exc)
    else:
        raise AssertionError("expected KeyError")
