"""In-memory event stream and its CSV serialisation.

Rows are tuples ``(time, kind, person, vehicle, link, request, detail)`` where
person/vehicle/link/request are integer indices (-1 when not applicable) and
``detail`` is a ``key=value;key=value`` string.  The id tables translate the
indices back to external ids when the stream is written.
"""
from __future__ import annotations

import csv
import gzip
import io
from pathlib import Path

KINDS = frozenset({
    "act_end", "act_start", "depart", "link_enter", "link_leave", "person_arrives",
    "person_stuck", "request_submitted", "request_scheduled", "request_rejected",
    "passenger_pickup", "passenger_dropoff", "task_start", "task_end", "relocation_start",
})

HEADER = ["time", "kind", "person", "vehicle", "link", "request", "detail"]


def parse_detail(detail: str) -> dict:
    if not detail:
        return {}
    return dict(part.split("=", 1) for part in detail.split(";"))


class EventStream:
    def __init__(self, person_ids=(), vehicle_ids=(), link_ids=()):
        self.person_ids = list(person_ids)
        self.vehicle_ids = list(vehicle_ids)
        self.link_ids = list(link_ids)
        self.rows: list[tuple] = []

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def add(self, time, kind, person=-1, vehicle=-1, link=-1, request=-1, detail=""):
        self.rows.append((time, kind, person, vehicle, link, request, detail))

    def of_kind(self, *kinds):
        return [r for r in self.rows if r[1] in kinds]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        pid, vid, lid = self.person_ids, self.vehicle_ids, self.link_ids
        for t, kind, p, v, l, r, d in self.rows:
            w.writerow([t, kind,
                        pid[p] if p >= 0 else "",
                        vid[v] if v >= 0 else "",
                        lid[l] if l >= 0 else "",
                        f"r{r}" if r >= 0 else "",
                        d])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        path = Path(path)
        data = self.to_csv_text().encode()
        if path.suffix == ".gz":
            # mtime=0 keeps the archive byte-identical across runs
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
                fh.write(data)
        else:
            path.write_bytes(data)


def read_csv(path, link_ids=None) -> EventStream:
    """Load an event CSV (optionally gzipped).

    Persons and vehicles are indexed by first appearance; links use
    ``link_ids`` ordering when given so the indices match a network.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    stream = EventStream(link_ids=link_ids or [])
    pmap, vmap = {}, {}
    lmap = {l: i for i, l in enumerate(stream.link_ids)}

    def index(table, mapping, key):
        if not key:
            return -1
        if key not in mapping:
            mapping[key] = len(table)
            table.append(key)
        return mapping[key]

    with opener(path, "rt", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HEADER:
            raise ValueError(f"unexpected event header {header}")
        for t, kind, p, v, l, r, d in reader:
            if kind not in KINDS:
                raise ValueError(f"unknown event kind {kind!r}")
            stream.rows.append((
                int(t), kind,
                index(stream.person_ids, pmap, p),
                index(stream.vehicle_ids, vmap, v),
                index(stream.link_ids, lmap, l),
                int(r[1:]) if r else -1,
                d,
            ))
    return stream
