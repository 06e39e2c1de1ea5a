"""Interaction data: loading, validation, statistics, sampling, synthesis.

A dataset directory holds plain text files with zero-based contiguous ids:

    data_size.txt            single line  ``M<TAB>O<TAB>N``
    user_bundle_train.txt    lines ``user_id<TAB>bundle_id``
    user_bundle_tune.txt     idem
    user_bundle_test.txt     idem
    user_item.txt            lines ``user_id<TAB>item_id``
    bundle_item.txt          lines ``bundle_id<TAB>item_id``

User-bundle and user-item interactions are independent observations; the
three user-bundle splits must be pairwise disjoint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from pathlib import Path

import numpy as np


class DatasetError(Exception):
    """Base class for dataset validation and sampling failures."""


class MissingFileError(DatasetError):
    pass


class MalformedLineError(DatasetError):
    def __init__(self, file: str, line_no: int, reason: str):
        super().__init__(f"{file}:{line_no}: {reason}")
        self.file = file
        self.line_no = line_no


class IdOutOfRangeError(DatasetError):
    def __init__(self, file: str, line_no: int, reason: str):
        super().__init__(f"{file}:{line_no}: {reason}")
        self.file = file
        self.line_no = line_no


class DuplicatePairError(DatasetError):
    pass


class OverlappingSplitsError(DatasetError):
    pass


class NoNegativeAvailableError(DatasetError):
    def __init__(self, user: int):
        super().__init__(f"user {user} interacted with every bundle; no negative exists")
        self.user = user


class InvalidSpecError(DatasetError):
    pass


class RelationKind(enum.Enum):
    USER_BUNDLE = "user_bundle"
    USER_ITEM = "user_item"
    BUNDLE_ITEM = "bundle_item"


@dataclass(frozen=True)
class EntityCounts:
    num_users: int
    num_bundles: int
    num_items: int

    def __post_init__(self):
        for field in ("num_users", "num_bundles", "num_items"):
            if getattr(self, field) <= 0:
                raise DatasetError(f"{field} must be strictly positive")

    def bounds(self, kind: RelationKind) -> tuple[int, int]:
        return {
            RelationKind.USER_BUNDLE: (self.num_users, self.num_bundles),
            RelationKind.USER_ITEM: (self.num_users, self.num_items),
            RelationKind.BUNDLE_ITEM: (self.num_bundles, self.num_items),
        }[kind]


@dataclass(frozen=True)
class RelationTable:
    """A binary relation stored as an (n, 2) int64 array of (left, right) pairs."""

    kind: RelationKind
    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(l), int(r)) for l, r in self.pairs}


@dataclass(frozen=True)
class InteractionDataset:
    counts: EntityCounts
    ub_train: RelationTable
    ub_tune: RelationTable
    ub_test: RelationTable
    ui: RelationTable
    bi: RelationTable

    @property
    def ub_all(self) -> np.ndarray:
        return np.concatenate(
            [self.ub_train.pairs, self.ub_tune.pairs, self.ub_test.pairs])


@dataclass(frozen=True)
class DatasetStats:
    num_users: int
    num_bundles: int
    num_items: int
    num_user_item: int
    num_user_bundle: int
    num_bundle_item: int
    avg_item_interactions: Fraction
    avg_bundle_interactions: Fraction
    avg_bundle_size: Fraction


@dataclass(frozen=True)
class TrainBatch:
    """(user, positive bundle, negative bundle) triples as an (n, 3) array."""

    triples: np.ndarray

    def __len__(self) -> int:
        return len(self.triples)


_SIZE_FILE = "data_size.txt"
_FILES = {
    "user_bundle_train.txt": RelationKind.USER_BUNDLE,
    "user_bundle_tune.txt": RelationKind.USER_BUNDLE,
    "user_bundle_test.txt": RelationKind.USER_BUNDLE,
    "user_item.txt": RelationKind.USER_ITEM,
    "bundle_item.txt": RelationKind.BUNDLE_ITEM,
}


def _parse_int_fields(file: str, line_no: int, line: str, arity: int) -> list[int]:
    fields = line.split("\t")
    if len(fields) != arity:
        raise MalformedLineError(file, line_no,
                                 f"expected {arity} tab-separated fields, got {len(fields)}")
    values = []
    for field in fields:
        try:
            values.append(int(field))
        except ValueError:
            raise MalformedLineError(file, line_no, f"not an integer: {field!r}") from None
    return values


def _read_relation(path: Path, kind: RelationKind, counts: EntityCounts) -> RelationTable:
    left_max, right_max = counts.bounds(kind)
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    name = path.name
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            left, right = _parse_int_fields(name, line_no, line, 2)
            if not (0 <= left < left_max):
                raise IdOutOfRangeError(name, line_no,
                                        f"left id {left} outside [0, {left_max})")
            if not (0 <= right < right_max):
                raise IdOutOfRangeError(name, line_no,
                                        f"right id {right} outside [0, {right_max})")
            if (left, right) in seen:
                raise DuplicatePairError(f"{name}:{line_no}: duplicate pair ({left}, {right})")
            seen.add((left, right))
            pairs.append((left, right))
    return RelationTable(kind, np.array(pairs, dtype=np.int64).reshape(-1, 2))


def load_dataset(dir_path: str | Path) -> InteractionDataset:
    """Load and validate a dataset directory."""
    root = Path(dir_path)
    size_path = root / _SIZE_FILE
    if not size_path.is_file():
        raise MissingFileError(f"missing {_SIZE_FILE} in {root}")
    raw = size_path.read_text(encoding="utf-8").strip("\n")
    m, o, n = _parse_int_fields(_SIZE_FILE, 1, raw, 3)
    counts = EntityCounts(m, o, n)

    tables = {}
    for name, kind in _FILES.items():
        path = root / name
        if not path.is_file():
            raise MissingFileError(f"missing {name} in {root}")
        tables[name] = _read_relation(path, kind, counts)

    train = tables["user_bundle_train.txt"]
    tune = tables["user_bundle_tune.txt"]
    test = tables["user_bundle_test.txt"]
    splits = [("train", train), ("tune", tune), ("test", test)]
    for i in range(len(splits)):
        for j in range(i + 1, len(splits)):
            overlap = splits[i][1].pair_set() & splits[j][1].pair_set()
            if overlap:
                pair = sorted(overlap)[0]
                raise OverlappingSplitsError(
                    f"pair {pair} present in both {splits[i][0]} and {splits[j][0]}")
    return InteractionDataset(counts, train, tune, test,
                              tables["user_item.txt"], tables["bundle_item.txt"])


def save_dataset(ds: InteractionDataset, dir_path: str | Path) -> None:
    """Write a dataset in the canonical on-disk layout (sorted pairs)."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    c = ds.counts
    (root / _SIZE_FILE).write_text(
        f"{c.num_users}\t{c.num_bundles}\t{c.num_items}\n", encoding="utf-8")
    named = {
        "user_bundle_train.txt": ds.ub_train,
        "user_bundle_tune.txt": ds.ub_tune,
        "user_bundle_test.txt": ds.ub_test,
        "user_item.txt": ds.ui,
        "bundle_item.txt": ds.bi,
    }
    for name, table in named.items():
        pairs = sorted(map(tuple, table.pairs.tolist()))
        lines = "".join(f"{l}\t{r}\n" for l, r in pairs)
        (root / name).write_text(lines, encoding="utf-8")


def compute_stats(ds: InteractionDataset) -> DatasetStats:
    """Exact interaction statistics; averages are kept as rationals."""
    c = ds.counts
    n_ub = len(ds.ub_train) + len(ds.ub_tune) + len(ds.ub_test)
    return DatasetStats(
        num_users=c.num_users,
        num_bundles=c.num_bundles,
        num_items=c.num_items,
        num_user_item=len(ds.ui),
        num_user_bundle=n_ub,
        num_bundle_item=len(ds.bi),
        avg_item_interactions=Fraction(len(ds.ui), c.num_users),
        avg_bundle_interactions=Fraction(n_ub, c.num_users),
        avg_bundle_size=Fraction(len(ds.bi), c.num_bundles),
    )


def round_fraction(value: Fraction, places: int = 2) -> str:
    """Round an exact rational half-up to a fixed number of decimals."""
    with localcontext() as ctx:
        ctx.prec = 50
        d = Decimal(value.numerator) / Decimal(value.denominator)
        return str(d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def format_stats(stats: DatasetStats) -> str:
    rows = [
        ("users", stats.num_users),
        ("bundles", stats.num_bundles),
        ("items", stats.num_items),
        ("user-item", stats.num_user_item),
        ("user-bundle", stats.num_user_bundle),
        ("bundle-item", stats.num_bundle_item),
        ("avg item interactions", round_fraction(stats.avg_item_interactions)),
        ("avg bundle interactions", round_fraction(stats.avg_bundle_interactions)),
        ("avg bundle size", round_fraction(stats.avg_bundle_size)),
    ]
    return "\n".join(f"{name}\t{value}" for name, value in rows)


def user_positive_sets(table: RelationTable, num_users: int) -> list[set[int]]:
    sets: list[set[int]] = [set() for _ in range(num_users)]
    for u, b in table.pairs:
        sets[int(u)].add(int(b))
    return sets


def sample_batch(ds: InteractionDataset, batch_size: int, rng: np.random.Generator,
                 pos_sets: list[set[int]] | None = None) -> TrainBatch:
    """Uniform positive pairs with one uniform non-interacted negative each.

    Deterministic given the generator state. Negatives are rejection
    sampled against the user's training set, so a user who interacted
    with every bundle raises ``NoNegativeAvailableError``.
    """
    train = ds.ub_train.pairs
    if len(train) == 0:
        raise DatasetError("cannot sample from an empty training split")
    if pos_sets is None:
        pos_sets = user_positive_sets(ds.ub_train, ds.counts.num_users)
    num_bundles = ds.counts.num_bundles
    idx = rng.integers(0, len(train), size=batch_size)
    triples = np.empty((batch_size, 3), dtype=np.int64)
    for row, i in enumerate(idx):
        user, pos = int(train[i, 0]), int(train[i, 1])
        interacted = pos_sets[user]
        if len(interacted) >= num_bundles:
            raise NoNegativeAvailableError(user)
        neg = int(rng.integers(0, num_bundles))
        while neg in interacted:
            neg = int(rng.integers(0, num_bundles))
        triples[row] = (user, pos, neg)
    return TrainBatch(triples)


@dataclass(frozen=True)
class SyntheticSpec:
    num_clusters: int
    users_per_cluster: int
    bundles_per_cluster: int
    items_per_cluster: int
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for field in ("num_clusters", "users_per_cluster",
                      "bundles_per_cluster", "items_per_cluster"):
            if getattr(self, field) <= 0:
                raise InvalidSpecError(f"{field} must be positive")
        if not 0.0 <= self.noise_rate < 1.0:
            raise InvalidSpecError("noise_rate must lie in [0, 1)")


def _split_counts(n: int) -> tuple[int, int, int]:
    # roughly 70/10/20 per user, always >= 1 train and >= 1 test when n >= 2
    n_train = max(1, round(0.7 * n))
    n_tune = round(0.1 * n)
    while n_train + n_tune >= n and n_tune > 0:
        n_tune -= 1
    while n_train + n_tune >= n and n_train > 1:
        n_train -= 1
    return n_train, n_tune, n - n_train - n_tune


def generate_synthetic(spec: SyntheticSpec) -> InteractionDataset:
    """Planted-cluster dataset with per-user activity variation.

    Entity ids are contiguous per cluster (entity ``k`` belongs to cluster
    ``k // per_cluster``), so planted labels are recoverable downstream.
    Users engage a random number of their own cluster's bundles and items;
    each bundle contains a random majority subset of its cluster's items.
    Cross-cluster noise edges are added to the training tables only, so
    the tune/test splits stay on-cluster.
    """
    rng = np.random.default_rng(spec.seed)
    nc = spec.num_clusters
    upc, bpc, ipc = spec.users_per_cluster, spec.bundles_per_cluster, spec.items_per_cluster
    num_users, num_bundles, num_items = nc * upc, nc * bpc, nc * ipc

    ub_train: list[tuple[int, int]] = []
    ub_tune: list[tuple[int, int]] = []
    ub_test: list[tuple[int, int]] = []
    ui: list[tuple[int, int]] = []
    bi: list[tuple[int, int]] = []

    for c in range(nc):
        bundles = np.arange(c * bpc, (c + 1) * bpc)
        items = np.arange(c * ipc, (c + 1) * ipc)
        for u in range(c * upc, (c + 1) * upc):
            activity = int(rng.integers(min(2, bpc), bpc + 1))
            chosen = rng.choice(bundles, size=activity, replace=False)
            n_train, n_tune, _ = _split_counts(activity)
            ub_train.extend((u, int(b)) for b in chosen[:n_train])
            ub_tune.extend((u, int(b)) for b in chosen[n_train:n_train + n_tune])
            ub_test.extend((u, int(b)) for b in chosen[n_train + n_tune:])
            n_items = int(rng.integers(min(2, ipc), ipc + 1))
            ui.extend((u, int(i)) for i in rng.choice(items, size=n_items, replace=False))
        for b in bundles:
            size = int(rng.integers(max(1, ipc // 2), ipc + 1))
            bi.extend((int(b), int(i)) for i in rng.choice(items, size=size, replace=False))

    def add_noise(edges: list[tuple[int, int]], left_per_cluster: int,
                  right_per_cluster: int, right_total: int) -> None:
        if spec.noise_rate == 0.0 or nc < 2:
            return
        existing = set(edges)
        target = round(spec.noise_rate * len(edges))
        added = 0
        while added < target:
            left = int(rng.integers(0, left_per_cluster * nc))
            right = int(rng.integers(0, right_total))
            if right // right_per_cluster == left // left_per_cluster:
                continue  # noise is cross-cluster by definition
            if (left, right) in existing:
                continue
            existing.add((left, right))
            edges.append((left, right))
            added += 1

    add_noise(ub_train, upc, bpc, num_bundles)
    add_noise(ui, upc, ipc, num_items)
    add_noise(bi, bpc, ipc, num_items)

    counts = EntityCounts(num_users, num_bundles, num_items)

    def table(kind: RelationKind, pairs: list[tuple[int, int]]) -> RelationTable:
        return RelationTable(kind, np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2))

    return InteractionDataset(
        counts,
        table(RelationKind.USER_BUNDLE, ub_train),
        table(RelationKind.USER_BUNDLE, ub_tune),
        table(RelationKind.USER_BUNDLE, ub_test),
        table(RelationKind.USER_ITEM, ui),
        table(RelationKind.BUNDLE_ITEM, bi),
    )
