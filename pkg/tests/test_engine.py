import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multifuse.catalog import CatalogConfig, ItemRecord
from multifuse.engine import (
    Query,
    SearchEngine,
    crossover_weight,
    one_shot_search,
    sequential_search_baseline,
)
from multifuse.errors import (
    IncompatibleQueryError,
    InvalidKError,
    InvalidShortlistError,
)
from multifuse.fusion import FusionMode, fuse_concat, fused_cosine
from multifuse.hnsw import brute_force_knn


def image_cosines(engine, items, query_image):
    q = query_image / np.linalg.norm(query_image)
    return {it.id: float(it.image_vector @ q / np.linalg.norm(it.image_vector)) for it in items}


def test_self_retrieval(textvec_engine_1k, synth_1k):
    for item in synth_1k.items[:40]:
        hit = textvec_engine_1k.one_shot_search(Query.from_item(item, k=1)).hits[0]
        assert hit.id == item.id
        assert hit.similarity == pytest.approx(1.0, abs=1e-6)


def test_query_catalog_symmetry(textvec_engine_1k, synth_1k):
    stored = textvec_engine_1k.index.vectors()
    cat = textvec_engine_1k.catalog
    for item in synth_1k.items[:100]:
        fused = textvec_engine_1k.fuse_query(Query.from_item(item))
        unit = fused.vector / np.linalg.norm(fused.vector)
        node = cat.index._label_to_node[cat.label_of(item.id)]
        assert np.max(np.abs(unit - stored[node])) < 1e-6


def test_response_shape(textvec_engine_1k, synth_1k):
    resp = one_shot_search(textvec_engine_1k, Query.from_item(synth_1k.items[0], k=7))
    assert len(resp.hits) == 7 and resp.mode == "textvec-fused" and not resp.aux_degenerate
    sims = [h.similarity for h in resp.hits]
    assert sims == sorted(sims, reverse=True)
    assert set(resp.timing) == {"fusion_ns", "search_ns", "total_ns"}
    assert resp.timing["total_ns"] >= resp.timing["search_ns"] >= 0
    assert "timing_ns" not in resp.to_json(include_timing=False)


def test_missing_text_is_flagged(textvec_engine_1k, synth_1k):
    resp = textvec_engine_1k.one_shot_search(Query(synth_1k.items[3].image_vector, k=3))
    assert resp.aux_degenerate and len(resp.hits) == 3


def test_weight_override_zero_is_image_ranking(textvec_engine_1k, synth_1k):
    n = len(synth_1k.items)
    rng = np.random.default_rng(4)
    for _ in range(20):
        q_img = rng.standard_normal(synth_1k.spec.image_dim)
        resp = textvec_engine_1k.one_shot_search(Query(q_img, text="anything at all", k=10, ef=n, weight=0.0))
        cos = image_cosines(textvec_engine_1k, synth_1k.items, q_img)
        ranked = sorted(cos, key=lambda i: (-cos[i], i))
        got = [h.id for h in resp.hits]
        # allow swaps only between candidates that float32 storage cannot tell apart
        for a, b in zip(got, ranked[:10]):
            assert a == b or abs(cos[a] - cos[b]) < 1e-6


def test_full_beam_matches_brute_force(textvec_engine_1k, synth_1k):
    eng = textvec_engine_1k
    items = [(int(l), v) for l, v in zip(eng.index.labels(), eng.index.vectors())]
    for item in synth_1k.items[100:130]:
        fused = eng.fuse_query(Query.from_item(item, text="gold"))
        got = eng.index.search(fused.vector, 10, ef=len(eng))
        assert got == brute_force_knn(items, fused.vector, 10)


def test_sequential_full_shortlist_equals_one_shot(textvec_engine_1k, synth_1k):
    n = len(synth_1k.items)
    for item in synth_1k.items[200:230]:
        q = Query.from_item(item, k=10, ef=n)
        one = textvec_engine_1k.one_shot_search(q)
        seq = sequential_search_baseline(textvec_engine_1k, q, n)
        assert {h.id for h in one.hits} == {h.id for h in seq.hits}
        for a, b in zip(one.hits, seq.hits):
            assert a.similarity == pytest.approx(b.similarity, abs=1e-6)
        assert set(seq.timing) == {"fusion_ns", "shortlist_ns", "rerank_ns", "total_ns"}


def test_sequential_shortlist_k_is_image_topk(textvec_engine_1k, synth_1k):
    eng = textvec_engine_1k
    eng.prepare_baseline()
    for item in synth_1k.items[300:320]:
        q = Query.from_item(item, k=5)
        seq = eng.sequential_search(q, 5)
        image_hits = eng._image_index.search(item.image_vector, 5, ef=eng.index.params.ef_search)
        assert {h.id for h in seq.hits} == {eng.catalog.id_of(h.id) for h in image_hits}
        sims = [h.similarity for h in seq.hits]
        assert sims == sorted(sims, reverse=True)


def test_sequential_errors(textvec_engine_1k, synth_1k):
    q = Query.from_item(synth_1k.items[0], k=10)
    with pytest.raises(InvalidShortlistError):
        textvec_engine_1k.sequential_search(q, 5)
    image_engine = SearchEngine.build(synth_1k.items[:50], synth_1k.config(FusionMode.IMAGE_ONLY))
    with pytest.raises(IncompatibleQueryError):
        image_engine.sequential_search(Query(synth_1k.items[0].image_vector, k=3), 10)


def test_query_errors(textvec_engine_1k, synth_1k):
    with pytest.raises(IncompatibleQueryError):
        textvec_engine_1k.one_shot_search(Query(np.ones(5), text="x"))
    with pytest.raises(IncompatibleQueryError):
        textvec_engine_1k.one_shot_search(Query(np.zeros(synth_1k.spec.image_dim), text="x"))
    with pytest.raises(InvalidKError):
        textvec_engine_1k.one_shot_search(Query(synth_1k.items[0].image_vector, k=0))


def test_query_from_json():
    q = Query.from_json({"image_vector": [1, 2], "text": "ring", "k": 3, "weight": 0.0}, k=10)
    assert q.k == 3 and q.weight == 0.0 and q.text == "ring" and q.ef is None
    assert Query.from_json({"image_vector": [1, 2], "class_scores": [0.1, 0.9]}).label == [0.1, 0.9]
    for bad in ([1, 2], {"text": "x"}, {"image_vector": [1], "colour": 1},
                {"image_vector": [1], "label": "a", "class_scores": [1.0]}, {"image_vector": ["x"]}):
        with pytest.raises(IncompatibleQueryError):
            Query.from_json(bad)


def test_onehot_label_and_scores():
    rng = np.random.default_rng(0)
    items = [ItemRecord(f"i{j}", rng.standard_normal(6), class_label="ab"[j % 2]) for j in range(60)]
    eng = SearchEngine.build(items, CatalogConfig(6, FusionMode.ONEHOT, 100.0, labels=("a", "b")))
    by_label = eng.one_shot_search(Query(rng.standard_normal(6), label="b", k=10))
    assert all(int(h.id[1:]) % 2 == 1 for h in by_label.hits)
    by_scores = eng.one_shot_search(Query(rng.standard_normal(6), label=[0.2, 0.7], k=10))
    assert all(int(h.id[1:]) % 2 == 1 for h in by_scores.hits)


def test_engine_round_trip(tmp_path, textvec_engine_1k, synth_1k):
    textvec_engine_1k.save(tmp_path / "b")
    loaded = SearchEngine.load(tmp_path / "b")
    for item in synth_1k.items[::97]:
        q = Query.from_item(item, k=10)
        assert loaded.one_shot_search(q).hits == textvec_engine_1k.one_shot_search(q).hits


def test_concurrent_searches_match_serial(textvec_engine_1k, synth_1k):
    queries = [Query.from_item(item, k=10) for item in synth_1k.items[:64]]
    serial = [textvec_engine_1k.one_shot_search(q).hits for q in queries]
    with ThreadPoolExecutor(max_workers=8) as pool:
        parallel = list(pool.map(lambda q: textvec_engine_1k.one_shot_search(q).hits, queries))
    assert parallel == serial


def unit(v):
    return np.asarray(v, dtype=float) / np.linalg.norm(v)


@given(st.floats(0.05, 0.9), st.floats(0.05, 0.9), st.integers(0, 2**32 - 1))
def test_crossover_weight(gap_image, gap_aux, seed):
    # candidates built on orthogonal axes so each cosine is set exactly
    rng = np.random.default_rng(seed)
    ci_b = rng.uniform(-0.05, 0.05)
    cw_a = rng.uniform(-0.05, 0.05)
    ci_a, cw_b = ci_b + gap_image, cw_a + gap_aux

    def cand(ci, cw):
        return unit([ci, math.sqrt(1 - ci * ci), 0]), unit([cw, 0, math.sqrt(1 - cw * cw)])

    q_img, q_aux = np.array([1.0, 0, 0]), np.array([1.0, 0, 0])
    w_star = crossover_weight(ci_a, cw_a, ci_b, cw_b)
    assert w_star == pytest.approx(math.sqrt(gap_image / gap_aux))
    for w, b_wins in ((0.8 * w_star, False), (1.25 * w_star, True)):
        q = fuse_concat(q_img, q_aux, w)
        sa = fused_cosine(q, fuse_concat(*cand(ci_a, cw_a), w))
        sb = fused_cosine(q, fuse_concat(*cand(ci_b, cw_b), w))
        assert (sb > sa) == b_wins


def test_crossover_requires_opposed_candidates():
    with pytest.raises(ValueError):
        crossover_weight(0.1, 0.5, 0.3, 0.9)
