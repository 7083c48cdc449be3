"""Desk-scale evaluation: synthetic catalogs, recall, class purity, latency.

Purity@k (fraction of the top-k sharing the query's true class) stands in
for human top-k similarity ratings; ``k * purity`` gives the familiar
0..k score scale.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import CatalogConfig, ItemRecord, labels_from_items, write_items
from .engine import Query, SearchEngine
from .errors import SpecError
from .fusion import FusionMode
from .text import SubwordEmbedderConfig

REPORT_SCHEMA_VERSION = 1

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 1000
    n_classes: int = 10
    image_dim: int = 64
    text_dim: int = 110
    image_noise: float = 1.0
    text_noise: float = 0.3
    confuser_fraction: float = 0.0
    label_noise: float = 0.0
    title_words: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise SpecError("need at least 2 classes")
        if self.n_classes > self.n_items:
            raise SpecError(f"{self.n_classes} classes cannot fit in {self.n_items} items")
        if not 0.0 <= self.confuser_fraction <= 1.0:
            raise SpecError("confuser_fraction must be in [0, 1]")
        if not 0.0 <= self.label_noise <= 1.0:
            raise SpecError("label_noise must be in [0, 1]")
        if self.image_noise < 0 or self.text_noise < 0:
            raise SpecError("noise levels must be >= 0")
        if self.image_dim < 2 or self.text_dim < 1 or self.title_words < 1:
            raise SpecError("dimensions and title length must be positive")

    @property
    def n_confuser_pairs(self) -> int:
        return int(round(self.confuser_fraction * self.n_items / 2))


@dataclass
class SyntheticCatalog:
    items: list[ItemRecord]
    truth: dict[str, str]
    confuser_pairs: list[tuple[str, str]]
    spec: SyntheticSpec

    def config(self, mode: FusionMode | str = FusionMode.IMAGE_ONLY, **kwargs) -> CatalogConfig:
        """Catalog config matching this data (label space, text dimension)."""
        kwargs.setdefault("labels", labels_from_items(self.items) or None)
        kwargs.setdefault("embedder", SubwordEmbedderConfig(dim=self.spec.text_dim, seed=self.spec.seed))
        return CatalogConfig(image_dim=self.spec.image_dim, mode=FusionMode(mode), **kwargs)


def _pseudo_word(rng: np.random.Generator) -> str:
    syllables = int(rng.integers(2, 4))
    return "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                   for _ in range(syllables)) + _CONSONANTS[rng.integers(len(_CONSONANTS))]


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate_synthetic_catalog(spec: SyntheticSpec) -> SyntheticCatalog:
    """Class-structured items with optional cross-class image near-duplicates.

    Images are class centers on the unit sphere plus Gaussian noise of
    expected norm ``image_noise``. Titles draw words from a per-class pool;
    each word is swapped for a shared filler word with probability
    ``text_noise`` (capped at 1). Category paths name the class's
    department and class word. Confuser pairs copy one item's image (plus
    a tiny perturbation) onto an item of a different class.
    """
    rng = np.random.default_rng(spec.seed)
    n, c, dim = spec.n_items, spec.n_classes, spec.image_dim

    centers = _unit_rows(rng, c, dim)
    class_words = []
    seen_words: set[str] = set()

    def fresh_word() -> str:
        while True:
            word = _pseudo_word(rng)
            if word not in seen_words:
                seen_words.add(word)
                return word

    class_names = [fresh_word() for _ in range(c)]
    departments = [fresh_word() for _ in range(max(1, c // 5))]
    for _ in range(c):
        class_words.append([fresh_word() for _ in range(8)])
    filler = [fresh_word() for _ in range(24)]

    classes = np.arange(n) % c
    rng.shuffle(classes)
    images = centers[classes] + rng.standard_normal((n, dim)) * (spec.image_noise / math.sqrt(dim))

    pairs: list[tuple[int, int]] = []
    if spec.n_confuser_pairs:
        pending: list[int] = []
        for a in rng.permutation(n):
            if len(pairs) == spec.n_confuser_pairs:
                break
            for j, b in enumerate(pending):
                if classes[b] != classes[a]:
                    pairs.append((b, int(a)))
                    del pending[j]
                    break
            else:
                pending.append(int(a))
        if len(pairs) < spec.n_confuser_pairs:
            raise SpecError("not enough cross-class items to form the requested confuser pairs")
        for a, b in pairs:
            images[b] = images[a] + rng.standard_normal(dim) * (0.01 / math.sqrt(dim))

    swap = min(1.0, spec.text_noise)
    label_names = [f"class{j:03d}" for j in range(c)]
    items = []
    truth = {}
    for i in range(n):
        cls = int(classes[i])
        words = []
        for _ in range(spec.title_words):
            if rng.random() < swap:
                words.append(filler[rng.integers(len(filler))])
            else:
                words.append(class_words[cls][rng.integers(len(class_words[cls]))])
        label = label_names[cls]
        if spec.label_noise and rng.random() < spec.label_noise:
            label = label_names[(cls + 1 + int(rng.integers(c - 1))) % c]
        item_id = f"item{i:06d}"
        items.append(ItemRecord(
            id=item_id,
            image_vector=np.round(images[i], 6),
            title=" ".join(words),
            category_path=f"{departments[cls % len(departments)]}>{class_names[cls]}",
            class_label=label,
        ))
        truth[item_id] = label_names[cls]
    confusers = [(items[a].id, items[b].id) for a, b in pairs]
    return SyntheticCatalog(items, truth, confusers, spec)


def write_synthetic(cat: SyntheticCatalog, catalog_path, truth_path) -> None:
    write_items(cat.items, catalog_path)
    with open(truth_path, "w", encoding="utf-8", newline="\n") as fh:
        for item in cat.items:
            fh.write(json.dumps({"id": item.id, "class": cat.truth[item.id]}, separators=(",", ":")) + "\n")


def read_truth(path) -> dict[str, str]:
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                truth[row["id"]] = row["class"]
    return truth


# metrics -------------------------------------------------------------------


def recall_at_k(found: Sequence, expected: Sequence, k: int) -> float:
    return len(set(list(found)[:k]) & set(list(expected)[:k])) / k


def eval_recall(engine: SearchEngine, queries: Sequence[Query], k: int, ef: int | None = None) -> float:
    """Mean overlap between the graph search and exhaustive search over the same fused index."""
    if not queries:
        return float("nan")
    total = 0.0
    for q in queries:
        fused = engine.fuse_query(q)
        approx = engine.index.search(fused.vector, k, ef=q.ef if ef is None else ef)
        exact = engine.index.brute_force(fused.vector, k)
        total += recall_at_k([h.id for h in approx], [h.id for h in exact], min(k, len(engine)))
    return total / len(queries)


@dataclass(frozen=True)
class LabeledQuery:
    query: Query
    true_class: str
    self_id: str | None = None


def purity_of(hit_ids: Sequence[str], true_class: str, truth: dict[str, str], self_id: str | None, k: int) -> float:
    ids = [h for h in hit_ids if h != self_id][:k]
    if not ids:
        return 0.0
    return sum(truth[h] == true_class for h in ids) / k


def eval_purity(engine: SearchEngine, queries: Sequence[LabeledQuery], truth: dict[str, str], k: int = 5,
                search=None) -> float:
    """Mean fraction of the top-k (self excluded) that share the query's true class."""
    if not queries:
        return float("nan")
    search = search or engine.one_shot_search
    total = 0.0
    for lq in queries:
        extra = 1 if lq.self_id is not None else 0
        resp = search(replace(lq.query, k=k + extra))
        total += purity_of([h.id for h in resp.hits], lq.true_class, truth, lq.self_id, k)
    return total / len(queries)


def percentiles_ns(samples: Sequence[int]) -> dict[str, int]:
    arr = np.asarray(samples, dtype=np.int64)
    return {f"p{p}": int(np.percentile(arr, p, method="nearest")) for p in (50, 95, 99)}


def item_queries(items: Sequence[ItemRecord], truth: dict[str, str], n: int, seed: int = 0,
                 include_description: bool = False) -> list[LabeledQuery]:
    """A reproducible sample of catalog items used as queries against their own catalog."""
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(items), size=min(n, len(items)), replace=False))
    return [LabeledQuery(Query.from_item(items[i], include_description), truth[items[i].id], items[i].id)
            for i in pick]


# reports -------------------------------------------------------------------


@dataclass
class ModeRow:
    name: str
    mode: str
    weight: float
    dim: int
    k: int
    purity: float
    score: float
    recall: float | None
    latency_ns: dict[str, int] | None = None
    phase_ns: dict[str, int] | None = None
    build_seconds: float | None = None
    index_bytes: int | None = None


@dataclass
class EvalReport:
    k: int
    n_items: int
    n_queries: int
    rows: list[ModeRow] = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        data = dict(data)
        rows = [ModeRow(**r) for r in data.pop("rows", [])]
        return cls(rows=rows, **data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def to_text(self) -> str:
        head = f"{'method':<28}{'dim':>6}{'purity@' + str(self.k):>11}{'score':>8}{'recall':>8}{'p50 us':>10}{'p99 us':>10}"
        lines = [f"items={self.n_items} queries={self.n_queries} k={self.k}", head, "-" * len(head)]
        for r in self.rows:
            rec = "-" if r.recall is None else f"{r.recall:.3f}"
            p50 = "-" if not r.latency_ns else f"{r.latency_ns['p50'] / 1e3:.1f}"
            p99 = "-" if not r.latency_ns else f"{r.latency_ns['p99'] / 1e3:.1f}"
            lines.append(f"{r.name:<28}{r.dim:>6}{r.purity:>11.4f}{r.score:>8.3f}{rec:>8}{p50:>10}{p99:>10}")
        return "\n".join(lines) + "\n"

    def row(self, name: str) -> ModeRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _row_name(mode: FusionMode, weight: float) -> str:
    return mode.value if mode is FusionMode.IMAGE_ONLY else f"{mode.value}(w={weight:g})"


def run_mode_comparison(
    items: Sequence[ItemRecord],
    truth: dict[str, str],
    base_config: CatalogConfig,
    modes: Iterable[FusionMode | str],
    k: int = 5,
    n_queries: int = 200,
    query_seed: int = 0,
    shortlist_size: int | None = 500,
    timing: bool = True,
    latency_queries: int = 0,
    index_dir: str | Path | None = None,
    per_query_csv: str | Path | None = None,
) -> EvalReport:
    """Build one index per mode over the same items and score a shared query set.

    A sequential-baseline row is added after the textvec-fused mode when
    ``shortlist_size`` is set. With ``timing=False`` every wall-clock field
    is left empty so reports are byte-for-byte reproducible.
    """
    modes = [FusionMode(m) for m in modes]
    if not modes:
        raise SpecError("at least one mode is required")
    queries = item_queries(items, truth, n_queries, query_seed, base_config.include_description)
    report = EvalReport(k=k, n_items=len(items), n_queries=len(queries))
    csv_rows: list[tuple] = []

    def score(name, engine, search, with_recall):
        purities, latencies = [], []
        for lq in queries:
            extra = 1 if lq.self_id is not None else 0
            resp = search(replace(lq.query, k=k + extra))
            p = purity_of([h.id for h in resp.hits], lq.true_class, truth, lq.self_id, k)
            purities.append(p)
            latencies.append(resp.timing["total_ns"])
            csv_rows.append((name, lq.self_id, lq.true_class, p, " ".join(h.id for h in resp.hits)))
        purity = float(np.mean(purities))
        recall = eval_recall(engine, [lq.query for lq in queries], k) if with_recall else None
        if latency_queries > len(queries):
            # extra warm passes over the same queries for stable percentiles
            reps = math.ceil(latency_queries / len(queries)) - 1
            for _ in range(reps):
                for lq in queries:
                    latencies.append(search(replace(lq.query, k=k + 1)).timing["total_ns"])
        return purity, recall, latencies

    for mode in modes:
        cfg = replace(base_config, mode=mode)
        t0 = time.perf_counter()
        engine = SearchEngine.build(items, cfg)
        build_seconds = time.perf_counter() - t0
        blob = engine.index.to_bytes()
        if index_dir is not None:
            Path(index_dir).mkdir(parents=True, exist_ok=True)
            (Path(index_dir) / f"{mode.value}.bin").write_bytes(blob)
        name = _row_name(mode, cfg.weight)
        purity, recall, lat = score(name, engine, engine.one_shot_search, True)
        report.rows.append(ModeRow(
            name=name, mode=mode.value, weight=cfg.weight if mode is not FusionMode.IMAGE_ONLY else 0.0,
            dim=engine.index.dim, k=k, purity=purity, score=k * purity, recall=recall,
            latency_ns=percentiles_ns(lat) if timing else None,
            build_seconds=build_seconds if timing else None,
            index_bytes=len(blob),
        ))
        if shortlist_size and mode is FusionMode.TEXTVEC:
            engine.prepare_baseline()
            phases: dict[str, list[int]] = {}

            def seq(q, _engine=engine):
                resp = _engine.sequential_search(q, max(shortlist_size, q.k))
                for key, val in resp.timing.items():
                    phases.setdefault(key, []).append(val)
                return resp

            seq_name = f"sequential(shortlist={shortlist_size})"
            purity, _, lat = score(seq_name, engine, seq, False)
            report.rows.append(ModeRow(
                name=seq_name, mode="sequential", weight=cfg.weight, dim=engine.index.dim, k=k,
                purity=purity, score=k * purity, recall=None,
                latency_ns=percentiles_ns(lat) if timing else None,
                phase_ns={key: int(np.median(v)) for key, v in sorted(phases.items())} if timing else None,
            ))

    if per_query_csv is not None:
        with open(per_query_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "query_id", "true_class", "purity", "hits"])
            writer.writerows(csv_rows)
    return report


def measure_latency(search, queries: Sequence[Query], warmup: int = 20) -> list[int]:
    """Single-threaded wall-clock samples (ns) of ``search`` over ``queries``."""
    for q in queries[:warmup]:
        search(q)
    samples = []
    for q in queries:
        t0 = time.perf_counter_ns()
        search(q)
        samples.append(time.perf_counter_ns() - t0)
    return samples
