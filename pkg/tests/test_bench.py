"""Benchmark candidate generation, classification, and seeded finalization."""

import json

import pytest

from relqa.bench import (
    Benchmark,
    BenchmarkCandidate,
    InsufficientPool,
    NEGATIVE_SUBSETS,
    SUBSET_ORDER,
    classify_candidates,
    effective_status,
    finalize,
    generate_candidates,
    read_benchmark,
    read_pool,
    write_benchmark,
    write_pool,
)
from relqa.config import load_config
from relqa.errors import ParseError, PipelineError
from relqa.gateway import Gateway


def bench_setup(make_config, name="bench", script="bench.jsonl", **overrides):
    from tests.conftest import DATA

    overrides.setdefault("gateway.mock_script", str(DATA / "mock_scripts" / script))
    cfg = load_config(make_config(name=name, **overrides))
    return cfg, Gateway(cfg.gateway)


def test_candidate_invariants():
    with pytest.raises(PipelineError):
        BenchmarkCandidate("c1", "img", "q?", "Maybe.", gt_label="maybe")
    with pytest.raises(PipelineError):
        BenchmarkCandidate("c1", "img", "q?", "Yes.", gt_label="yes", proposed_subset="category")
    with pytest.raises(PipelineError):
        BenchmarkCandidate("c1", "img", "q?", "No.", gt_label="no", proposed_subset="positive")
    ok = BenchmarkCandidate("c1", "img", "q?", "No.", gt_label="no")
    assert ok.proposed_subset == "unclassified"
    assert ok.review_status == "pending"


def test_generate_candidates_rounds_and_drops(fixture_corpus, make_config):
    cfg, gw = bench_setup(make_config)
    candidates, dropped, retryable = generate_candidates(fixture_corpus, cfg, gw)
    assert not retryable
    total_slots = len(fixture_corpus.relations) * cfg.bench_rounds
    assert len(candidates) + len(dropped) == total_slots
    assert len(candidates) == 35
    reasons = sorted(d.reason for d in dropped)
    assert reasons == ["ambiguous_reference", "bbox_leak", "llm_skip", "llm_skip", "malformed"]
    ids = [c.candidate_id for c in candidates]
    assert ids == sorted(ids)
    assert all(c.candidate_id.split("-r")[1] in ("01", "02") for c in candidates)
    by_label = {"yes": 0, "no": 0}
    for c in candidates:
        by_label[c.gt_label] += 1
        if c.gt_label == "yes":
            assert c.proposed_subset == "positive"
        else:
            assert c.proposed_subset == "unclassified"
    assert by_label == {"yes": 17, "no": 18}


def test_generate_candidates_deterministic(fixture_corpus, make_config):
    pools = []
    for run in range(2):
        cfg, gw = bench_setup(make_config, name=f"det{run}")
        candidates, _, _ = generate_candidates(fixture_corpus, cfg, gw)
        pools.append(candidates)
    assert pools[0] == pools[1]


def test_classify_candidates(fixture_corpus, make_config):
    cfg, gw = bench_setup(make_config, name="gen")
    candidates, _, _ = generate_candidates(fixture_corpus, cfg, gw)

    cfg2, gw2 = bench_setup(make_config, name="cls", script="classifier.jsonl")
    updated, retryable = classify_candidates(candidates, cfg2, gw2)
    assert not retryable
    assert len(updated) == len(candidates)
    counts = {}
    for c in updated:
        counts[c.proposed_subset] = counts.get(c.proposed_subset, 0) + 1
    assert counts == {"positive": 17, "category": 6, "attribute": 6, "relation": 6}
    # positives pass through untouched, order preserved
    assert [c.candidate_id for c in updated] == [c.candidate_id for c in candidates]
    for before, after in zip(candidates, updated):
        if before.gt_label == "yes":
            assert after is before


def test_classify_gateway_error_keeps_candidate(make_config, tmp_path):
    cands = [
        BenchmarkCandidate("c1", "img-001", "Is it blue?", "No, it is red.", gt_label="no"),
        BenchmarkCandidate("c2", "img-001", "Is it tall?", "No, it is short.", gt_label="no"),
    ]
    script = tmp_path / "short.jsonl"
    script.write_text(json.dumps({"reply": "1. The category is wrong."}) + "\n", encoding="utf-8")
    cfg, gw = bench_setup(make_config, name="err", **{"gateway.mock_script": str(script)})
    updated, retryable = classify_candidates(cands, cfg, gw)
    assert len(updated) == 2
    assert updated[0].proposed_subset == "category"
    # the second hit script exhaustion: kept unchanged and listed for retry
    assert updated[1] == cands[1]
    assert [r.candidate_id for r in retryable] == ["c2"]


def test_pool_roundtrip(tmp_path):
    cands = [
        BenchmarkCandidate("c1", "img-001", "Is it blue?", "Yes.", "yes", "positive", "kept"),
        BenchmarkCandidate("c2", "img-002", "Is it tall?", "No.", "no", "category"),
    ]
    path = tmp_path / "pool.jsonl"
    assert write_pool(cands, str(path)) == 2
    assert read_pool(str(path)) == cands


def test_pool_rejects_duplicates(tmp_path):
    cand = BenchmarkCandidate("c1", "img-001", "Is it blue?", "Yes.", "yes", "positive")
    path = tmp_path / "pool.jsonl"
    write_pool([cand, cand], str(path))
    with pytest.raises(ParseError):
        read_pool(str(path))


def make_pool(n_positive=20, n_each=8):
    pool = []
    for i in range(n_positive):
        pool.append(
            BenchmarkCandidate(
                f"pos-{i:03d}", f"img-{i % 5}", f"Is thing {i} there?", "Yes.", "yes", "positive"
            )
        )
    for subset in NEGATIVE_SUBSETS:
        for i in range(n_each):
            pool.append(
                BenchmarkCandidate(
                    f"{subset}-{i:03d}",
                    f"img-{i % 5}",
                    f"Is the {subset} {i} right?",
                    "No.",
                    "no",
                    subset,
                )
            )
    return pool


def keep_all(pool):
    return {c.candidate_id: "kept" for c in pool}


def test_finalize_counts_and_order():
    pool = make_pool()
    bench = finalize(pool, keep_all(pool), n_per_subset=5, n_positive=12, seed=7)
    assert len(bench.items) == 12 + 3 * 5
    subsets = [i.subset for i in bench.items]
    # subsets appear in a fixed order, ids sorted within each
    boundaries = [subsets.index(s) for s in SUBSET_ORDER]
    assert boundaries == sorted(boundaries)
    for subset in SUBSET_ORDER:
        ids = [i.item_id for i in bench.items if i.subset == subset]
        assert ids == sorted(ids)
    assert all(i.gt_label == "yes" for i in bench.items if i.subset == "positive")
    assert all(i.gt_label == "no" for i in bench.items if i.subset != "positive")


def test_finalize_is_pure_and_seeded():
    pool = make_pool()
    decisions = keep_all(pool)
    a = finalize(pool, decisions, 5, 12, seed=7)
    b = finalize(pool, decisions, 5, 12, seed=7)
    assert a == b
    c = finalize(pool, decisions, 5, 12, seed=8)
    assert {i.item_id for i in c.items} != {i.item_id for i in a.items}
    # input order must not matter
    d = finalize(list(reversed(pool)), decisions, 5, 12, seed=7)
    assert d == a


def test_finalize_respects_decisions():
    pool = make_pool()
    decisions = keep_all(pool)
    # rejections shrink the eligible set
    rejected = {"category-000", "category-001", "category-002", "category-003"}
    for cid in rejected:
        decisions[cid] = "rejected"
    bench = finalize(pool, decisions, 4, 12, seed=7)
    chosen = {i.item_id for i in bench.items if i.subset == "category"}
    assert chosen == {f"category-{i:03d}" for i in range(4, 8)}
    assert not chosen & rejected


def test_finalize_pending_not_kept():
    pool = make_pool(n_positive=3, n_each=1)
    with pytest.raises(InsufficientPool) as err:
        finalize(pool, {}, 1, 3, seed=0)
    assert err.value.subset == "positive"
    assert err.value.have == 0
    assert err.value.need == 3


def test_finalize_insufficient_pool_subset_order():
    pool = make_pool(n_positive=5, n_each=3)
    decisions = keep_all(pool)
    # both positive and category fall short: positive is reported first
    with pytest.raises(InsufficientPool) as err:
        finalize(pool, decisions, 4, 9, seed=0)
    assert err.value.subset == "positive"
    with pytest.raises(InsufficientPool) as err:
        finalize(pool, decisions, 4, 5, seed=0)
    assert err.value.subset == "category"
    assert (err.value.have, err.value.need) == (3, 4)


def test_effective_status_override():
    cand = BenchmarkCandidate("c1", "img", "q?", "Yes.", "yes", "positive", "pending")
    assert effective_status(cand, {}) == "pending"
    assert effective_status(cand, {"c1": "kept"}) == "kept"
    assert effective_status(cand, {"other": "kept"}) == "pending"


def test_benchmark_roundtrip(tmp_path):
    pool = make_pool()
    bench = finalize(pool, keep_all(pool), 5, 12, seed=7)
    path = tmp_path / "bench.jsonl"
    assert write_benchmark(bench, str(path)) == len(bench.items)
    assert tuple(read_benchmark(str(path))) == bench.items
