"""Relational event histories: parsing, risksets, interval grids and counts.

Actors are stored as dense integer ids assigned in first-appearance order;
the original labels live in ``EventHistory.actors``.  Events are grouped
into intervals ``(t_{m-1}, t_m]``: every event occurring exactly at a grid
boundary ``t_m`` belongs to interval ``m``, and its exposure is the waiting
time ``t_m - t_{m-1}``.  Events at or before the origin ``t_0`` form the
burn-in: they train the statistics but are never modeled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

RISKSET_MODES = ("full", "observed", "explicit")


class EventDataError(ValueError):
    """Raised for malformed or inconsistent event / covariate input."""


@dataclass(frozen=True)
class Event:
    sender: int
    receiver: int
    time: float


@dataclass(frozen=True)
class Riskset:
    """Fixed set of directed dyads with a dense dyad index."""

    senders: np.ndarray
    receivers: np.ndarray
    mode: str = "full"

    def __post_init__(self):
        if self.senders.shape != self.receivers.shape:
            raise ValueError("senders and receivers must have equal length")
        if np.any(self.senders == self.receivers):
            raise EventDataError("riskset contains a self-loop")
        pairs = set(zip(self.senders.tolist(), self.receivers.tolist()))
        if len(pairs) != len(self.senders):
            raise EventDataError("riskset contains duplicate dyads")
        self.senders.setflags(write=False)
        self.receivers.setflags(write=False)

    def __len__(self) -> int:
        return len(self.senders)

    @property
    def dyads(self) -> list[tuple[int, int]]:
        return list(zip(self.senders.tolist(), self.receivers.tolist()))

    def index(self, n_actors: int) -> np.ndarray:
        """Dense lookup table ``[sender, receiver] -> dyad id`` (-1 if absent)."""
        table = np.full((n_actors, n_actors), -1, dtype=np.int64)
        table[self.senders, self.receivers] = np.arange(len(self))
        return table

    def dyad_id(self, sender: int, receiver: int) -> int:
        hits = np.flatnonzero((self.senders == sender) & (self.receivers == receiver))
        if hits.size == 0:
            raise KeyError((sender, receiver))
        return int(hits[0])


def build_riskset(
    n_actors: int,
    mode: str = "full",
    *,
    senders: Sequence[int] | None = None,
    receivers: Sequence[int] | None = None,
    dyads: Iterable[tuple[int, int]] | None = None,
) -> Riskset:
    """Build a riskset over actors ``0..n_actors-1``.

    ``full`` gives all n(n-1) ordered pairs in lexicographic order,
    ``observed`` keeps the dyads that carry at least one event (pass the
    event ``senders``/``receivers``), and ``explicit`` validates ``dyads``.
    """
    if n_actors < 2:
        raise EventDataError("a riskset needs at least 2 actors")
    if mode == "full":
        s, r = np.divmod(np.arange(n_actors * n_actors), n_actors)
        keep = s != r
        return Riskset(s[keep].astype(np.int64), r[keep].astype(np.int64), "full")
    if mode == "observed":
        if senders is None or receivers is None:
            raise ValueError("observed riskset needs the event senders and receivers")
        pairs = sorted(set(zip(np.asarray(senders).tolist(), np.asarray(receivers).tolist())))
        if not pairs:
            raise EventDataError("no events")
        s, r = (np.array(x, dtype=np.int64) for x in zip(*pairs))
        return Riskset(s, r, "observed")
    if mode == "explicit":
        if dyads is None:
            raise ValueError("explicit riskset needs a dyad list")
        pairs = [(int(i), int(j)) for i, j in dyads]
        for i, j in pairs:
            if i == j:
                raise EventDataError(f"explicit riskset contains self-loop ({i}, {j})")
            if not (0 <= i < n_actors and 0 <= j < n_actors):
                raise EventDataError(f"explicit riskset dyad ({i}, {j}) has an unknown actor")
        if not pairs:
            raise EventDataError("explicit riskset is empty")
        s, r = (np.array(x, dtype=np.int64) for x in zip(*pairs))
        return Riskset(s, r, "explicit")
    raise ValueError(f"unknown riskset mode {mode!r}; expected one of {RISKSET_MODES}")


@dataclass(frozen=True)
class IntervalGrid:
    """Boundaries ``t_0 < t_1 < ... < t_M``; interval m is ``(t_{m-1}, t_m]``."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = self.boundaries
        if b.ndim != 1 or b.size < 2:
            raise EventDataError("interval grid needs at least one interval")
        if not np.all(np.isfinite(b)) or np.any(np.diff(b) <= 0):
            raise EventDataError("interval boundaries must be finite and strictly increasing")
        b.setflags(write=False)

    @property
    def origin(self) -> float:
        return float(self.boundaries[0])

    @property
    def n_intervals(self) -> int:
        return self.boundaries.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def locate(self, times: np.ndarray) -> np.ndarray:
        """0-based interval index of each time (-1 for times at or before t_0)."""
        idx = np.searchsorted(self.boundaries, times, side="left") - 1
        idx[np.asarray(times) <= self.boundaries[0]] = -1
        if np.any(idx >= self.n_intervals):
            raise EventDataError("event time beyond the last grid boundary")
        return idx


@dataclass(frozen=True)
class EventHistory:
    actors: tuple[str, ...]
    senders: np.ndarray
    receivers: np.ndarray
    times: np.ndarray
    riskset: Riskset
    grid: IntervalGrid
    interval: np.ndarray  # per-event 0-based interval, -1 for burn-in
    burn_in_end: float | None = None
    grid_width: float | None = None
    riskset_dyads: tuple | None = field(default=None, repr=False)

    @property
    def n_actors(self) -> int:
        return len(self.actors)

    @property
    def n_events(self) -> int:
        return self.times.size

    @property
    def n_intervals(self) -> int:
        return self.grid.n_intervals

    @property
    def modeled(self) -> np.ndarray:
        return self.interval >= 0

    @property
    def n_modeled(self) -> int:
        return int(np.count_nonzero(self.modeled))

    @property
    def events(self) -> list[Event]:
        return [
            Event(int(s), int(r), float(t))
            for s, r, t in zip(self.senders, self.receivers, self.times)
        ]

    def event_dyads(self) -> np.ndarray:
        return self.riskset.index(self.n_actors)[self.senders, self.receivers]

    def batches(self):
        """Yield ``(interval, senders, receivers)`` for each simultaneous batch.

        Burn-in events are batched by distinct timestamp and reported with
        interval -1; modeled batches follow in interval order.
        """
        iv, t = self.interval, self.times
        new = np.ones(iv.size, dtype=bool)
        new[1:] = (iv[1:] != iv[:-1]) | ((iv[1:] < 0) & (t[1:] != t[:-1]))
        bounds = np.flatnonzero(new)
        ends = np.r_[bounds[1:], self.n_events]
        for a, b in zip(bounds, ends):
            yield int(self.interval[a]), self.senders[a:b], self.receivers[a:b]


def make_history(
    senders: Sequence[int],
    receivers: Sequence[int],
    times: Sequence[float],
    *,
    actors: Sequence[str] | int | None = None,
    riskset: str = "full",
    dyads: Iterable[tuple[int, int]] | None = None,
    burn_in_end: float | None = None,
    origin: float = 0.0,
    grid_width: float | None = None,
) -> EventHistory:
    """Assemble a validated history from integer-coded events."""
    s = np.asarray(senders, dtype=np.int64)
    r = np.asarray(receivers, dtype=np.int64)
    t = np.asarray(times, dtype=float)
    if s.size == 0:
        raise EventDataError("no events")
    if not (s.shape == r.shape == t.shape):
        raise EventDataError("sender, receiver and time columns differ in length")
    if not np.all(np.isfinite(t)):
        raise EventDataError("event times must be finite")
    if np.any(s == r):
        k = int(np.flatnonzero(s == r)[0])
        raise EventDataError(f"self-loop event at position {k}: actor {s[k]}")
    if actors is None:
        n = int(max(s.max(), r.max())) + 1
        labels = tuple(str(a) for a in range(n))
    elif isinstance(actors, int):
        labels = tuple(str(a) for a in range(actors))
    else:
        labels = tuple(str(a) for a in actors)
    n = len(labels)
    if s.min() < 0 or r.min() < 0 or max(s.max(), r.max()) >= n:
        raise EventDataError("event references an actor outside the actor set")

    order = np.argsort(t, kind="stable")
    s, r, t = s[order], r[order], t[order]

    t0 = origin if burn_in_end is None else float(burn_in_end)
    if burn_in_end is None and t[0] <= t0:
        raise EventDataError(
            f"event at time {t[0]!r} is not after the origin {t0!r}; "
            "declare burn_in_end or a smaller origin"
        )
    post = t[t > t0]
    if post.size == 0:
        raise EventDataError("no events after the burn-in window")
    if grid_width is None:
        bounds = np.r_[t0, np.unique(post)]
    else:
        if not grid_width > 0:
            raise EventDataError("grid_width must be positive")
        n_int = int(math.ceil((post[-1] - t0) / grid_width))
        bounds = t0 + grid_width * np.arange(n_int + 1)
        if bounds[-1] < post[-1]:
            bounds = np.r_[bounds, bounds[-1] + grid_width]
    grid = IntervalGrid(bounds.astype(float))
    interval = grid.locate(t)

    rs = build_riskset(n, riskset, senders=s, receivers=r, dyads=dyads)
    lookup = rs.index(n)[s, r]
    if np.any(lookup < 0):
        k = int(np.flatnonzero(lookup < 0)[0])
        raise EventDataError(f"event ({labels[s[k]]}, {labels[r[k]]}) is outside the riskset")
    for a in (s, r, t, interval):
        a.setflags(write=False)
    return EventHistory(
        actors=labels,
        senders=s,
        receivers=r,
        times=t,
        riskset=rs,
        grid=grid,
        interval=interval,
        burn_in_end=None if burn_in_end is None else float(burn_in_end),
        grid_width=grid_width,
        riskset_dyads=None if dyads is None else tuple(rs.dyads),
    )


def counts(history: EventHistory) -> np.ndarray:
    """Event counts ``dN[dyad, interval]`` over the modeled intervals."""
    keep = history.modeled
    out = np.zeros((len(history.riskset), history.n_intervals), dtype=np.int64)
    np.add.at(out, (history.event_dyads()[keep], history.interval[keep]), 1)
    return out


def _parse_time(raw: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise EventDataError(f"line {line}: cannot parse time {raw!r}") from None
    if not math.isfinite(value):
        raise EventDataError(f"line {line}: non-finite time {raw!r}")
    return value


def load_events(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    *,
    delimiter: str = ",",
    extra_actors: Sequence[str] = (),
    riskset: str = "full",
    dyads: Iterable[tuple[str, str]] | None = None,
    burn_in_end: float | None = None,
    origin: float = 0.0,
    grid_width: float | None = None,
) -> EventHistory:
    """Read a delimited event file with a header row.

    ``schema`` maps ``sender``/``receiver``/``time`` to column names.
    """
    cols = {"sender": "sender", "receiver": "receiver", "time": "time"}
    cols.update(schema or {})
    symbols: dict[str, int] = {}
    senders, receivers, times = [], [], []

    def actor_id(label: str) -> int:
        return symbols.setdefault(label, len(symbols))

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise EventDataError("no events")
        missing = [c for c in cols.values() if c not in reader.fieldnames]
        if missing:
            raise EventDataError(f"missing column(s) {missing} in {path}")
        for row in reader:
            line = reader.line_num
            if None in row or any(row.get(c) in (None, "") for c in cols.values()):
                raise EventDataError(f"line {line}: malformed row")
            a, b = row[cols["sender"]].strip(), row[cols["receiver"]].strip()
            if a == b:
                raise EventDataError(f"line {line}: self-loop event on actor {a!r}")
            times.append(_parse_time(row[cols["time"]], line))
            senders.append(actor_id(a))
            receivers.append(actor_id(b))
    if not times:
        raise EventDataError("no events")
    for label in extra_actors:
        actor_id(str(label))
    coded = None
    if dyads is not None:
        try:
            coded = [(symbols[str(i)], symbols[str(j)]) for i, j in dyads]
        except KeyError as exc:
            raise EventDataError(f"explicit riskset names unknown actor {exc.args[0]!r}") from None
    return make_history(
        senders,
        receivers,
        times,
        actors=list(symbols),
        riskset=riskset,
        dyads=coded,
        burn_in_end=burn_in_end,
        origin=origin,
        grid_width=grid_width,
    )


def write_events(history: EventHistory, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sender", "receiver", "time"])
        for s, r, t in zip(history.senders, history.receivers, history.times):
            w.writerow([history.actors[s], history.actors[r], repr(float(t))])


def history_to_dict(history: EventHistory) -> dict:
    return {
        "actors": list(history.actors),
        "events": [
            [int(s), int(r), repr(float(t))]
            for s, r, t in zip(history.senders, history.receivers, history.times)
        ],
        "riskset": history.riskset.mode,
        "dyads": None if history.riskset_dyads is None else [list(d) for d in history.riskset_dyads],
        "burn_in_end": None if history.burn_in_end is None else repr(history.burn_in_end),
        "origin": repr(history.grid.origin),
        "grid_width": None if history.grid_width is None else repr(history.grid_width),
    }


def history_from_dict(doc: Mapping) -> EventHistory:
    ev = doc["events"]
    if not ev:
        raise EventDataError("no events")
    s, r, t = zip(*ev)
    burn = doc.get("burn_in_end")
    width = doc.get("grid_width")
    return make_history(
        s,
        r,
        [float(x) for x in t],
        actors=doc["actors"],
        riskset=doc.get("riskset", "full"),
        dyads=doc.get("dyads"),
        burn_in_end=None if burn is None else float(burn),
        origin=float(doc.get("origin", "0.0")) if burn is None else 0.0,
        grid_width=None if width is None else float(width),
    )


def save_history(history: EventHistory, path: str | Path) -> None:
    Path(path).write_text(json.dumps(history_to_dict(history), indent=1), encoding="utf-8")


def load_history(path: str | Path) -> EventHistory:
    return history_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class CovariateTable:
    """Time-varying actor and dyad attributes.

    Values are step functions: a lookup at time t returns the last record
    with effective-from <= t, or the covariate's default (0 unless declared)
    when no record precedes t.
    """

    actor: dict[str, dict[int, tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    dyad: dict[str, dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]] = field(
        default_factory=dict
    )
    defaults: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_records(
        cls,
        actor_records: Iterable[tuple[int, float, str, float]] = (),
        dyad_records: Iterable[tuple[int, int, float, str, float]] = (),
        defaults: Mapping[str, float] | None = None,
    ) -> "CovariateTable":
        actor: dict = {}
        for a, t, name, v in actor_records:
            actor.setdefault(name, {}).setdefault(int(a), []).append((float(t), float(v)))
        dyad: dict = {}
        for i, j, t, name, v in dyad_records:
            dyad.setdefault(name, {}).setdefault((int(i), int(j)), []).append((float(t), float(v)))
        table = cls(defaults=dict(defaults or {}))
        for target, source in ((table.actor, actor), (table.dyad, dyad)):
            for name, per_entity in source.items():
                target[name] = {}
                for key, recs in per_entity.items():
                    recs.sort(key=lambda x: x[0])
                    ts = np.array([x[0] for x in recs])
                    if np.any(np.diff(ts) <= 0):
                        raise EventDataError(
                            f"covariate {name!r} for {key}: effective-from times not strictly increasing"
                        )
                    target[name][key] = (ts, np.array([x[1] for x in recs]))
        return table

    @property
    def names(self) -> set[str]:
        return set(self.actor) | set(self.dyad)

    def _step(self, series, times: np.ndarray, default: float) -> np.ndarray:
        ts, vs = series
        pos = np.searchsorted(ts, times, side="right") - 1
        out = np.where(pos >= 0, vs[np.maximum(pos, 0)], default)
        return out

    def lookup_actor(self, name: str, actor: int, t: float) -> float:
        if name not in self.actor:
            raise KeyError(f"unknown actor covariate {name!r}")
        default = self.defaults.get(name, 0.0)
        series = self.actor[name].get(int(actor))
        if series is None:
            return default
        return float(self._step(series, np.array([t]), default)[0])

    def lookup_dyad(self, name: str, sender: int, receiver: int, t: float) -> float:
        if name not in self.dyad:
            raise KeyError(f"unknown dyad covariate {name!r}")
        default = self.defaults.get(name, 0.0)
        series = self.dyad[name].get((int(sender), int(receiver)))
        if series is None:
            return default
        return float(self._step(series, np.array([t]), default)[0])

    def actor_matrix(self, name: str, times: np.ndarray, n_actors: int) -> np.ndarray:
        """Values ``[len(times), n_actors]``."""
        if name not in self.actor:
            raise KeyError(f"unknown actor covariate {name!r}")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        default = self.defaults.get(name, 0.0)
        out = np.full((times.size, n_actors), default, dtype=float)
        for a, series in self.actor[name].items():
            if a < n_actors:
                out[:, a] = self._step(series, times, default)
        return out

    def dyad_matrix(self, name: str, times: np.ndarray, riskset: Riskset) -> np.ndarray:
        """Values ``[len(times), n_dyads]``."""
        if name not in self.dyad:
            raise KeyError(f"unknown dyad covariate {name!r}")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        default = self.defaults.get(name, 0.0)
        out = np.full((times.size, len(riskset)), default, dtype=float)
        where = {d: k for k, d in enumerate(riskset.dyads)}
        for key, series in self.dyad[name].items():
            k = where.get(key)
            if k is not None:
                out[:, k] = self._step(series, times, default)
        return out


def load_covariates(
    history: EventHistory,
    actor_path: str | Path | None = None,
    dyad_path: str | Path | None = None,
    *,
    defaults: Mapping[str, float] | None = None,
    delimiter: str = ",",
) -> CovariateTable:
    """Read ``actor,time,name,value`` and ``sender,receiver,time,name,value`` files.

    Actor labels are resolved against the history's symbol table.
    """
    symbols = {label: k for k, label in enumerate(history.actors)}

    def resolve(label: str, line: int) -> int:
        try:
            return symbols[label.strip()]
        except KeyError:
            raise EventDataError(f"line {line}: unknown actor {label!r}") from None

    def value(raw: str, line: int) -> float:
        try:
            v = float(raw)
        except (TypeError, ValueError):
            raise EventDataError(f"line {line}: cannot parse value {raw!r}") from None
        if not math.isfinite(v):
            raise EventDataError(f"line {line}: non-finite value {raw!r}")
        return v

    actor_records, dyad_records = [], []
    if actor_path is not None:
        with open(actor_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            for row in reader:
                n = reader.line_num
                try:
                    actor_records.append(
                        (resolve(row["actor"], n), _parse_time(row["time"], n), row["name"].strip(), value(row["value"], n))
                    )
                except (KeyError, AttributeError):
                    raise EventDataError(f"line {n}: malformed actor covariate row") from None
    if dyad_path is not None:
        with open(dyad_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            for row in reader:
                n = reader.line_num
                try:
                    dyad_records.append(
                        (
                            resolve(row["sender"], n),
                            resolve(row["receiver"], n),
                            _parse_time(row["time"], n),
                            row["name"].strip(),
                            value(row["value"], n),
                        )
                    )
                except (KeyError, AttributeError):
                    raise EventDataError(f"line {n}: malformed dyad covariate row") from None
    return CovariateTable.from_records(actor_records, dyad_records, defaults)
