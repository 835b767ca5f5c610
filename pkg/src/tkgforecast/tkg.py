"""Temporal knowledge graph data: quadruplets, splits, snapshot windows.

Events are stored as int64 arrays of shape [n, 4] with columns
``(subject, relation, object, timestamp)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ParseError, ValidationError

SPLITS = ("train", "valid", "test")


class Quadruplet(NamedTuple):
    s: int
    r: int
    o: int
    t: int


def as_events(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 4), dtype=np.int64)
    return arr.reshape(-1, 4)


def span(events: np.ndarray) -> int:
    """Number of timestamps covered by a split (0 when empty)."""
    if len(events) == 0:
        return 0
    return int(events[:, 3].max() - events[:, 3].min() + 1)


@dataclass(frozen=True)
class Dataset:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    num_entities: int
    num_base_relations: int
    augmented: bool = False

    def __post_init__(self):
        for name in SPLITS:
            events = as_events(getattr(self, name))
            order = np.argsort(events[:, 3], kind="stable")
            object.__setattr__(self, name, events[order])
        self.validate()

    @property
    def num_relations(self) -> int:
        return 2 * self.num_base_relations if self.augmented else self.num_base_relations

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_events(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    @property
    def min_time(self) -> int:
        return int(self.all_events()[:, 3].min())

    def validate(self) -> None:
        if len(self.train) == 0:
            raise ValidationError("empty split: train")
        for name in SPLITS:
            ev = getattr(self, name)
            if len(ev) == 0:
                continue
            if ev[:, [0, 2]].min() < 0 or ev[:, [0, 2]].max() >= self.num_entities:
                raise ValidationError(f"{name}: entity id outside [0, {self.num_entities})")
            if ev[:, 1].min() < 0 or ev[:, 1].max() >= self.num_relations:
                raise ValidationError(f"{name}: relation id outside [0, {self.num_relations})")
            if ev[:, 3].min() < 0:
                raise ValidationError(f"{name}: negative timestamp")
        prev_max = None
        for name in SPLITS:
            ev = getattr(self, name)
            if len(ev) == 0:
                continue
            if prev_max is not None and ev[0, 3] <= prev_max:
                raise ValidationError(f"{name} overlaps an earlier split in time")
            prev_max = ev[-1, 3]


# -- file I/O ----------------------------------------------------------

def _read_split(path: Path, granularity: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            cols = line.split("\t") if "\t" in line else line.split()
            if len(cols) < 4:
                raise ParseError(f"{path}:{lineno}: expected at least 4 columns, got {len(cols)}")
            try:
                s, r, o, t = (int(c) for c in cols[:4])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            rows.append((s, r, o, t // granularity))
    return as_events(rows)


def load_quadruplets(path, granularity: int = 1) -> Dataset:
    """Load train/valid/test quadruplet files from a dataset directory.

    ``path`` may be the directory or any file inside it.  Vocabulary sizes
    come from ``stat.txt`` when present, else max id + 1.
    """
    if granularity <= 0:
        raise ConfigError("granularity must be positive")
    root = Path(path)
    if root.is_file():
        root = root.parent
    if not (root / "train.txt").exists():
        raise FileNotFoundError(root / "train.txt")
    splits = {}
    for name in SPLITS:
        f = root / f"{name}.txt"
        splits[name] = _read_split(f, granularity) if f.exists() else as_events([])
    if len(splits["train"]) == 0:
        raise ValidationError("empty split: train")
    stat = root / "stat.txt"
    if stat.exists():
        fields = stat.read_text().split()
        num_entities, num_relations = int(fields[0]), int(fields[1])
    else:
        every = np.concatenate(list(splits.values()))
        num_entities = int(max(every[:, 0].max(), every[:, 2].max()) + 1)
        num_relations = int(every[:, 1].max() + 1)
    return Dataset(splits["train"], splits["valid"], splits["test"], num_entities, num_relations)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        with open(out / f"{name}.txt", "w") as fh:
            for s, r, o, t in dataset.split(name):
                fh.write(f"{s}\t{r}\t{o}\t{t}\n")
    (out / "stat.txt").write_text(f"{dataset.num_entities}\t{dataset.num_base_relations}\n")
    return out


# -- reverse relations -------------------------------------------------

def reverse_edges(events: np.ndarray, num_base_relations: int) -> np.ndarray:
    """Swap subject/object and map relation r to (r + R) mod 2R (an involution)."""
    out = events[:, [2, 1, 0, 3]].copy()
    out[:, 1] = (out[:, 1] + num_base_relations) % (2 * num_base_relations)
    return out


def add_reverse_relations(dataset: Dataset) -> Dataset:
    """Add an ``(o, r+R, s, t)`` edge for every event; doubles the relation vocabulary."""
    if dataset.augmented:
        raise ContractError("dataset already carries reverse relations")
    R = dataset.num_base_relations
    new = {name: np.concatenate([dataset.split(name), reverse_edges(dataset.split(name), R)]) for name in SPLITS}
    return replace(dataset, augmented=True, **new)


# -- snapshot windows --------------------------------------------------

@dataclass(frozen=True)
class HistorySpec:
    offsets: tuple[int, ...] = (31, 23, 15, 7, 3, 1, 0)

    def __post_init__(self):
        offs = tuple(int(x) for x in self.offsets)
        object.__setattr__(self, "offsets", offs)
        if not offs or offs[-1] != 0:
            raise ConfigError(f"history offsets must end in 0, got {offs}")
        if any(a <= b for a, b in zip(offs, offs[1:])):
            raise ConfigError(f"history offsets must be strictly decreasing, got {offs}")

    @classmethod
    def parse(cls, text: str) -> "HistorySpec":
        return cls(tuple(int(x) for x in text.split(",") if x.strip()))

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def oldest(self) -> int:
        return self.offsets[0]


def num_snapshots(hx: HistorySpec, window: int) -> int:
    return math.ceil((hx.oldest + 1) / window)


def snapshot_of(t_a: int, window: int, tau):
    """Index k of the snapshot (t_a-(k+1)T, t_a-kT] holding time ``tau``."""
    if window <= 0:
        raise ConfigError("window size must be positive")
    tau = np.asarray(tau)
    if np.any(tau > t_a):
        raise ContractError(f"timestamp after anchor {t_a}")
    k = (t_a - tau) // window
    return int(k) if k.ndim == 0 else k


@dataclass(frozen=True, eq=False)
class SnapshotGraph:
    """Dense per-snapshot entity copies over the window ending at ``anchor``.

    Copy ``(entity e, snapshot k)`` has id ``k * num_entities + e``; k = 0 is
    the snapshot nearest the anchor.  Event edges run ``src -> dst`` with
    the event's relation type, so ``dst`` aggregates from ``src``.
    Self-connection edges run from copy ``(e, k+1)`` to ``(e, k)``.
    """
    anchor: int
    window: int
    num_snapshots: int
    num_entities: int
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    time: np.ndarray
    self_src: np.ndarray = field(repr=False)
    self_dst: np.ndarray = field(repr=False)

    @property
    def num_copies(self) -> int:
        return self.num_entities * self.num_snapshots

    @property
    def num_event_edges(self) -> int:
        return len(self.src)

    def copy_id(self, entity, snapshot):
        return np.asarray(snapshot) * self.num_entities + np.asarray(entity)

    def copy_entity(self) -> np.ndarray:
        return np.tile(np.arange(self.num_entities), self.num_snapshots)

    def copy_snapshot(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_snapshots), self.num_entities)

    def snapshot_right_edge(self, k):
        """Latest timestamp covered by snapshot ``k``."""
        return self.anchor - np.asarray(k) * self.window

    def copy_reference_time(self) -> np.ndarray:
        return self.snapshot_right_edge(self.copy_snapshot())

    def copies_for_history(self, entities, hx: HistorySpec) -> np.ndarray:
        """[len(entities), |hx|] copy ids, oldest offset first."""
        ks = np.array([snapshot_of(self.anchor, self.window, self.anchor - h) for h in hx.offsets])
        return ks[None, :] * self.num_entities + np.asarray(entities)[:, None]


def build_snapshot_graph(dataset: Dataset, t_a: int, window: int, hx: HistorySpec,
                         events: np.ndarray | None = None) -> SnapshotGraph:
    """Window graph over ``(t_a - S*T, t_a]`` from the (augmented) edges.

    ``events`` overrides the edge source (default: the train split); only
    edges with timestamp <= t_a are ever placed.
    """
    if window <= 0:
        raise ConfigError("window size must be positive")
    S = num_snapshots(hx, window)
    N = dataset.num_entities
    ev = dataset.train if events is None else events
    lo = t_a - S * window
    sel = ev[(ev[:, 3] > lo) & (ev[:, 3] <= t_a)]
    k = (t_a - sel[:, 3]) // window
    src = k * N + sel[:, 0]
    dst = k * N + sel[:, 2]
    ents = np.arange(N)
    self_src = np.concatenate([(kk + 1) * N + ents for kk in range(S - 1)]) if S > 1 else np.zeros(0, np.int64)
    self_dst = np.concatenate([kk * N + ents for kk in range(S - 1)]) if S > 1 else np.zeros(0, np.int64)
    return SnapshotGraph(
        anchor=int(t_a), window=int(window), num_snapshots=S, num_entities=N,
        src=src.astype(np.int64), dst=dst.astype(np.int64),
        rel=sel[:, 1].astype(np.int64), time=sel[:, 3].astype(np.int64),
        self_src=self_src.astype(np.int64), self_dst=self_dst.astype(np.int64))


# -- synthetic data ----------------------------------------------------

def generate_synthetic(num_entities: int, num_relations: int, num_timestamps: int,
                       pattern: str = "functional", seed: int = 0, period: int = 4,
                       split_fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> Dataset:
    """Desk-scale TKG with one event per (s, r) per timestamp.

    ``functional``: object is a fixed random function f(s, r).
    ``periodic``: each (s, r) cycles through ``period`` distinct random
    objects, object at time t being ``cycle[t % period]``.
    """
    if min(num_entities, num_relations, num_timestamps) < 2:
        raise ConfigError("synthetic sizes must be >= 2")
    rng = np.random.default_rng(seed)
    N, R, T = num_entities, num_relations, num_timestamps
    s_grid, r_grid = np.meshgrid(np.arange(N), np.arange(R), indexing="ij")
    s_flat, r_flat = s_grid.reshape(-1), r_grid.reshape(-1)
    if pattern == "functional":
        objects = np.repeat(rng.integers(0, N, size=N * R)[:, None], T, axis=1)
    elif pattern == "periodic":
        if not 1 <= period <= N:
            raise ConfigError("period must lie in [1, num_entities]")
        cycles = np.stack([rng.choice(N, size=period, replace=False) for _ in range(N * R)])
        objects = cycles[:, np.arange(T) % period]
    else:
        raise ConfigError(f"unknown pattern {pattern!r}")
    times = np.arange(T)
    events = np.stack([
        np.repeat(s_flat, T), np.repeat(r_flat, T), objects.reshape(-1), np.tile(times, N * R)], axis=1)
    events = events[np.lexsort((events[:, 1], events[:, 0], events[:, 3]))]
    n_train = int(round(split_fractions[0] * T))
    n_valid = int(round(split_fractions[1] * T))
    t = events[:, 3]
    return Dataset(
        events[t < n_train], events[(t >= n_train) & (t < n_train + n_valid)],
        events[t >= n_train + n_valid], N, R)
