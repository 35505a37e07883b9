import math

import numpy as np
import pytest
from hypothesis import given, settings

from dlcrem.events import (
    CovariateTable,
    EventDataError,
    build_riskset,
    counts,
    history_from_dict,
    history_to_dict,
    load_covariates,
    load_events,
    load_history,
    make_history,
    save_history,
    write_events,
)

from conftest import histories, random_history


def test_full_riskset_is_lexicographic_without_loops():
    rs = build_riskset(4)
    assert len(rs) == 12
    assert rs.dyads[:4] == [(0, 1), (0, 2), (0, 3), (1, 0)]
    assert all(i != j for i, j in rs.dyads)


def test_observed_riskset_keeps_only_event_dyads():
    h = make_history([0, 2, 0], [1, 0, 1], [1.0, 2.0, 3.0], actors=3, riskset="observed")
    assert h.riskset.dyads == [(0, 1), (2, 0)]


def test_explicit_riskset_rejects_events_outside():
    with pytest.raises(EventDataError, match="outside the riskset"):
        make_history([0, 1], [1, 2], [1.0, 2.0], actors=3, riskset="explicit", dyads=[(0, 1)])


def test_riskset_rejects_self_loops_and_duplicates():
    with pytest.raises(EventDataError):
        build_riskset(3, "explicit", dyads=[(0, 0)])
    with pytest.raises(EventDataError):
        build_riskset(3, "explicit", dyads=[(0, 1), (0, 1)])


def test_grid_uses_distinct_times_and_batches_ties():
    h = make_history([0, 1, 2, 0], [1, 2, 0, 2], [1.0, 1.0, 2.5, 4.0], actors=3)
    assert h.grid.boundaries.tolist() == [0.0, 1.0, 2.5, 4.0]
    assert h.interval.tolist() == [0, 0, 1, 2]
    assert h.grid.widths.tolist() == [1.0, 1.5, 1.5]
    batches = [(m, s.tolist(), r.tolist()) for m, s, r in h.batches()]
    assert batches == [(0, [0, 1], [1, 2]), (1, [2], [0]), (2, [0], [2])]


def test_burn_in_events_train_but_are_not_modeled():
    h = make_history([0, 1, 1, 2, 0], [1, 0, 0, 1, 2], [1.0, 2.0, 2.0, 3.0, 5.0], actors=3, burn_in_end=2.0)
    assert h.interval.tolist() == [-1, -1, -1, 0, 1]
    assert h.n_modeled == 2
    assert h.grid.origin == 2.0
    # burn-in batches are split by timestamp
    assert [len(s) for m, s, _ in h.batches() if m < 0] == [1, 2]
    assert counts(h).sum() == 2


def test_counts_tally_every_modeled_event():
    rng = np.random.default_rng(3)
    h = random_history(rng, 6, 150, 0.4, burn_in=10)
    c = counts(h)
    assert c.shape == (30, h.n_intervals)
    idx = h.event_dyads()
    for d in range(30):
        assert c[d].sum() == np.sum((idx == d) & h.modeled)


def test_event_at_origin_needs_burn_in():
    with pytest.raises(EventDataError, match="origin"):
        make_history([0], [1], [0.0], actors=2)


def test_self_loop_event_is_rejected():
    with pytest.raises(EventDataError, match="self-loop"):
        make_history([0, 1], [1, 1], [1.0, 2.0], actors=2)


def test_unsorted_input_is_stably_sorted():
    h = make_history([0, 1, 2], [1, 2, 0], [3.0, 1.0, 1.0], actors=3)
    assert h.times.tolist() == [1.0, 1.0, 3.0]
    assert h.senders.tolist() == [1, 2, 0]


def test_fixed_width_grid_covers_all_events():
    h = make_history([0, 1, 0], [1, 0, 1], [0.3, 1.2, 2.9], actors=2, grid_width=1.0)
    assert h.grid.boundaries.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert h.interval.tolist() == [0, 1, 2]


def test_csv_round_trip(tmp_path):
    h = random_history(np.random.default_rng(8), 5, 40)
    path = tmp_path / "ev.csv"
    write_events(h, path)
    back = load_events(path)
    # labels are assigned in order of first appearance
    lab = np.array(back.actors)
    assert lab[back.senders].tolist() == np.array(h.actors)[h.senders].tolist()
    assert lab[back.receivers].tolist() == np.array(h.actors)[h.receivers].tolist()
    assert back.times.tolist() == h.times.tolist()


def test_json_round_trip(tmp_path):
    h = random_history(np.random.default_rng(9), 4, 30, burn_in=5)
    save_history(h, tmp_path / "h.json")
    back = load_history(tmp_path / "h.json")
    assert back.times.tolist() == h.times.tolist()
    assert back.interval.tolist() == h.interval.tolist()
    assert back.riskset.dyads == h.riskset.dyads
    assert history_from_dict(history_to_dict(h)).burn_in_end == h.burn_in_end


@settings(max_examples=30, deadline=None)
@given(histories())
def test_round_trip_property(h):
    back = history_from_dict(history_to_dict(h))
    assert back.senders.tolist() == h.senders.tolist()
    assert back.grid.boundaries.tolist() == h.grid.boundaries.tolist()


@pytest.mark.parametrize(
    "body, message",
    [
        ("sender,receiver,time\na,b,1\na,a,2\n", "line 3: self-loop"),
        ("sender,receiver,time\na,b,1\nb,a,nan\n", "line 3: non-finite"),
        ("sender,receiver,time\na,b,x\n", "line 2: cannot parse"),
        ("sender,receiver\na,b\n", "missing column"),
        ("sender,receiver,time\n", "no events"),
    ],
)
def test_malformed_files_report_the_line(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(EventDataError, match=message):
        load_events(path)


def test_schema_maps_column_names(tmp_path):
    path = tmp_path / "ev.csv"
    path.write_text("from;to;when\nx;y;1.5\ny;x;2\n")
    h = load_events(path, {"sender": "from", "receiver": "to", "time": "when"}, delimiter=";")
    assert h.actors == ("x", "y") and h.n_events == 2


def test_covariates_are_step_functions():
    table = CovariateTable.from_records([(0, 0.0, "c", 1.0), (0, 2.0, "c", 5.0)], [], defaults={"c": -1.0})
    assert table.lookup_actor("c", 0, 1.9) == 1.0
    assert table.lookup_actor("c", 0, 2.0) == 5.0
    assert table.lookup_actor("c", 1, 3.0) == -1.0
    m = table.actor_matrix("c", np.array([1.0, 3.0]), 2)
    assert m.tolist() == [[1.0, -1.0], [5.0, -1.0]]


def test_covariate_times_must_increase():
    with pytest.raises(EventDataError):
        CovariateTable.from_records([(0, 1.0, "c", 1.0), (0, 1.0, "c", 2.0)], [])


def test_load_covariates_resolves_labels(tmp_path):
    ev = tmp_path / "ev.csv"
    ev.write_text("sender,receiver,time\nA,B,1\nB,A,2\n")
    h = load_events(ev)
    (tmp_path / "a.csv").write_text("actor,time,name,value\nA,0,gdp,2.5\nB,0,gdp,1.0\n")
    (tmp_path / "d.csv").write_text("sender,receiver,time,name,value\nA,B,0,ally,1\n")
    table = load_covariates(h, tmp_path / "a.csv", tmp_path / "d.csv", defaults={"ally": 0.0})
    assert table.lookup_actor("gdp", 0, 1.0) == 2.5
    assert table.lookup_dyad("ally", 0, 1, 1.0) == 1.0
    assert table.lookup_dyad("ally", 1, 0, 1.0) == 0.0
    (tmp_path / "bad.csv").write_text("actor,time,name,value\nZ,0,gdp,1\n")
    with pytest.raises(EventDataError, match="line 2: unknown actor"):
        load_covariates(h, tmp_path / "bad.csv")


def test_interval_widths_sum_to_span():
    h = random_history(np.random.default_rng(1), 4, 50, burn_in=7)
    assert math.isclose(h.grid.widths.sum(), h.times[-1] - h.burn_in_end)
