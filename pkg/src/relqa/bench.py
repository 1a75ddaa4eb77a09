"""Benchmark construction: yes/no candidate generation, hallucination-type
classification of the negatives, and seeded finalization into fixed-size
subsets after human review.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from dataclasses import dataclass

from .annotations import Corpus, build_image_context
from .errors import ParseError, PipelineError
from .gateway import CompletionRequest, Gateway, GatewayError
from .prompts import format_qa_pair, load_template, render_chat, render_classifier_chat
from .qa_parsing import (
    Malformed,
    ParsedGeneration,
    Skip,
    detect_bbox_leak,
    normalize_yesno,
    parse_classification,
    parse_generation,
)

logger = logging.getLogger(__name__)

NEGATIVE_SUBSETS = ("category", "attribute", "relation")
SUBSET_ORDER = ("positive", "category", "attribute", "relation")


class InsufficientPool(PipelineError):
    def __init__(self, subset: str, have: int, need: int):
        super().__init__(f"subset {subset!r} has {have} kept candidates, needs {need}")
        self.subset = subset
        self.have = have
        self.need = need


@dataclass(frozen=True)
class BenchmarkCandidate:
    candidate_id: str
    image_id: str
    question: str
    answer: str
    gt_label: str
    proposed_subset: str = "unclassified"
    review_status: str = "pending"

    def __post_init__(self):
        if self.gt_label not in ("yes", "no"):
            raise PipelineError(f"bad gt_label {self.gt_label!r}")
        if self.review_status not in ("pending", "kept", "rejected"):
            raise PipelineError(f"bad review_status {self.review_status!r}")
        if self.gt_label == "yes" and self.proposed_subset != "positive":
            raise PipelineError("yes candidates belong to the positive subset")
        if self.gt_label == "no" and self.proposed_subset not in (
            *NEGATIVE_SUBSETS,
            "unclassified",
        ):
            raise PipelineError(f"bad subset {self.proposed_subset!r} for a no candidate")


@dataclass(frozen=True)
class BenchmarkItem:
    item_id: str
    image_id: str
    question: str
    gt_label: str
    subset: str


@dataclass(frozen=True)
class Benchmark:
    name: str
    items: tuple[BenchmarkItem, ...]
    seed: int


@dataclass(frozen=True)
class DroppedCandidate:
    candidate_id: str
    reason: str


@dataclass(frozen=True)
class RetryableCandidate:
    candidate_id: str
    error: str


def generate_candidates(corpus: Corpus, cfg, gateway: Gateway):
    """Generate yes/no candidates, several rounds per relation when asked.

    Returns (candidates, dropped, retryable). The reference answer decides
    gt_label via yes/no normalization; candidates whose reference answer is
    ambiguous are dropped rather than guessed.
    """
    template = load_template("yesno")
    candidates: list[BenchmarkCandidate] = []
    dropped: list[DroppedCandidate] = []
    retryable: list[RetryableCandidate] = []
    for rel in sorted(corpus.relations, key=lambda r: r.relation_id):
        ctx = build_image_context(corpus, rel, cfg.overlap_threshold)
        transcript = render_chat(template, ctx, rel)
        for rnd in range(1, cfg.bench_rounds + 1):
            candidate_id = f"{rel.relation_id}-r{rnd:02d}"
            tag = f"bench:{rel.relation_id}:r{rnd:02d}"
            try:
                resp = gateway.complete(
                    CompletionRequest(
                        messages=transcript,
                        model_name=cfg.model_name,
                        temperature=cfg.temperature,
                        max_tokens=cfg.max_tokens,
                        request_tag=tag,
                    )
                )
            except GatewayError as exc:
                logger.warning("candidate %s failed: %s", candidate_id, exc)
                retryable.append(RetryableCandidate(candidate_id, str(exc)))
                continue
            parsed = parse_generation(resp.text)
            if isinstance(parsed, Skip):
                dropped.append(DroppedCandidate(candidate_id, "llm_skip"))
                continue
            if isinstance(parsed, Malformed):
                dropped.append(DroppedCandidate(candidate_id, "malformed"))
                continue
            assert isinstance(parsed, ParsedGeneration)
            if detect_bbox_leak(resp.text):
                dropped.append(DroppedCandidate(candidate_id, "bbox_leak"))
                continue
            verdict = normalize_yesno(parsed.answer)
            if not verdict.confident:
                dropped.append(DroppedCandidate(candidate_id, "ambiguous_reference"))
                continue
            gt_label = "yes" if verdict.verdict == "positive" else "no"
            candidates.append(
                BenchmarkCandidate(
                    candidate_id=candidate_id,
                    image_id=rel.image_id,
                    question=parsed.question,
                    answer=parsed.answer,
                    gt_label=gt_label,
                    proposed_subset="positive" if gt_label == "yes" else "unclassified",
                )
            )
    candidates.sort(key=lambda c: c.candidate_id)
    return candidates, dropped, retryable


def classify_candidates(candidates, cfg, gateway: Gateway):
    """Assign each negative candidate a hallucination type via the classifier
    prompt. Positives pass through; unparseable replies stay unclassified.

    Returns (updated candidates, retryable).
    """
    template = load_template("classifier")
    updated: list[BenchmarkCandidate] = []
    retryable: list[RetryableCandidate] = []
    for cand in candidates:
        if cand.gt_label != "no":
            updated.append(cand)
            continue
        transcript = render_classifier_chat(template, format_qa_pair(cand.question, cand.answer))
        try:
            resp = gateway.complete(
                CompletionRequest(
                    messages=transcript,
                    model_name=cfg.model_name,
                    temperature=cfg.temperature,
                    max_tokens=cfg.max_tokens,
                    request_tag=f"classify:{cand.candidate_id}",
                )
            )
        except GatewayError as exc:
            logger.warning("classification of %s failed: %s", cand.candidate_id, exc)
            retryable.append(RetryableCandidate(cand.candidate_id, str(exc)))
            updated.append(cand)
            continue
        subset = parse_classification(resp.text)
        if subset is None:
            logger.info("candidate %s left unclassified", cand.candidate_id)
            updated.append(dataclasses.replace(cand, proposed_subset="unclassified"))
        else:
            updated.append(dataclasses.replace(cand, proposed_subset=subset))
    return updated, retryable


def candidate_to_json(cand: BenchmarkCandidate) -> dict:
    return {
        "candidate_id": cand.candidate_id,
        "image_id": cand.image_id,
        "question": cand.question,
        "answer": cand.answer,
        "gt_label": cand.gt_label,
        "proposed_subset": cand.proposed_subset,
        "review_status": cand.review_status,
    }


def write_pool(candidates, path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for cand in candidates:
            fh.write(json.dumps(candidate_to_json(cand), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_pool(path) -> list[BenchmarkCandidate]:
    pool = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc
            try:
                cand = BenchmarkCandidate(**rec)
            except (TypeError, PipelineError) as exc:
                raise ParseError(str(path), lineno, f"bad candidate: {exc}") from exc
            if cand.candidate_id in seen:
                raise ParseError(str(path), lineno, f"duplicate candidate {cand.candidate_id!r}")
            seen.add(cand.candidate_id)
            pool.append(cand)
    return pool


def effective_status(cand: BenchmarkCandidate, decisions: dict[str, str]) -> str:
    return decisions.get(cand.candidate_id, cand.review_status)


def finalize(
    pool,
    decisions: dict[str, str],
    n_per_subset: int,
    n_positive: int,
    seed: int,
    name: str = "benchmark",
) -> Benchmark:
    """Draw the final benchmark from kept candidates only.

    Each subset is a uniform sample without replacement, seeded per subset so
    the draw is a pure function of (pool, decisions, sizes, seed).
    """
    kept: dict[str, list[BenchmarkCandidate]] = {s: [] for s in SUBSET_ORDER}
    for cand in pool:
        if effective_status(cand, decisions) != "kept":
            continue
        if cand.proposed_subset in kept:
            kept[cand.proposed_subset].append(cand)
    needs = {"positive": n_positive}
    needs.update({s: n_per_subset for s in NEGATIVE_SUBSETS})
    for subset in SUBSET_ORDER:
        if len(kept[subset]) < needs[subset]:
            raise InsufficientPool(subset, len(kept[subset]), needs[subset])

    items: list[BenchmarkItem] = []
    for subset in SUBSET_ORDER:
        by_id = {c.candidate_id: c for c in kept[subset]}
        rng = random.Random(f"{seed}:{subset}")
        chosen = rng.sample(sorted(by_id), needs[subset])
        for candidate_id in sorted(chosen):
            cand = by_id[candidate_id]
            items.append(
                BenchmarkItem(
                    item_id=cand.candidate_id,
                    image_id=cand.image_id,
                    question=cand.question,
                    gt_label=cand.gt_label,
                    subset=subset,
                )
            )
    return Benchmark(name=name, items=tuple(items), seed=seed)


def write_benchmark(bench: Benchmark, path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for item in bench.items:
            rec = {
                "item_id": item.item_id,
                "image_id": item.image_id,
                "question": item.question,
                "gt_label": item.gt_label,
                "subset": item.subset,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_benchmark(path) -> list[BenchmarkItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc
            try:
                items.append(BenchmarkItem(**rec))
            except TypeError as exc:
                raise ParseError(str(path), lineno, f"bad item: {exc}") from exc
    return items
