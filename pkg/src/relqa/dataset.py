"""Instruction-sample generation driven by seed relations.

One relation yields one two-turn conversation (question unsupervised, answer
supervised), optionally extended with companion multi-round conversations for
the same image. Samples can be rendered into the conversation formats of three
model families and exported as versioned JSON lines.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

from .annotations import (
    Corpus,
    RelationAnnotation,
    build_image_context,
    relation_from_json,
    relation_to_json,
)
from .errors import ParseError, PipelineError
from .gateway import CompletionRequest, Gateway, GatewayError
from .prompts import load_template, render_chat, select_template
from .qa_parsing import Malformed, ParsedGeneration, Skip, detect_bbox_leak, parse_generation

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODEL_TEMPLATE_IDS = ("llava_llama2", "mplug_owl", "instructblip")

_LLAVA_SYS = (
    "You are a helpful language and vision assistant. "
    "You are able to understand the visual content that the user provides, "
    "and assist the user with a variety of tasks using natural language."
)
_LLAVA_FIRST = "[INST] <<SYS>> " + _LLAVA_SYS + " <</SYS>> <image> <question> [/INST] <answer> </s>"
_LLAVA_NEXT = "[INST] <question> [/INST] <answer> </s>"

_MPLUG_HEADER = (
    "The following is a conversation between a curious human and AI assistant. "
    "The assistant gives helpful, detailed, and polite answers to the user's questions."
)
_MPLUG_FIRST = "Human: <image>\nHuman: <question>\nAI: <answer>"
_MPLUG_NEXT = "Human: <question>\nAI: <answer>"

_INSTRUCTBLIP = "<image> <question> <answer>"


class MalformedCompanion(PipelineError):
    """A companion conversation violates the human-first alternation."""


@dataclass(frozen=True)
class ConversationTurn:
    role: str
    text: str
    supervised: bool

    def __post_init__(self):
        if self.role not in ("human", "ai"):
            raise PipelineError(f"bad turn role {self.role!r}")
        if self.supervised and self.role != "ai":
            raise PipelineError("only ai turns may be supervised")
        if not self.text:
            raise PipelineError("empty turn text")


@dataclass(frozen=True)
class InstructionSample:
    sample_id: str
    image_id: str
    turns: tuple[ConversationTurn, ...]
    seed_relation: RelationAnnotation
    generator: str
    provenance: str

    def __post_init__(self):
        if not self.turns or self.turns[0].role != "human":
            raise PipelineError("sample must start with a human turn")
        if not any(t.role == "ai" for t in self.turns):
            raise PipelineError("sample needs at least one ai turn")
        if self.seed_relation.subject.mask is None or self.seed_relation.object.mask is None:
            raise PipelineError("seed relation must carry subject and object masks")

    def qa_rounds(self) -> list[tuple[str, str]]:
        rounds = []
        i = 0
        while i + 1 < len(self.turns):
            if self.turns[i].role == "human" and self.turns[i + 1].role == "ai":
                rounds.append((self.turns[i].text, self.turns[i + 1].text))
                i += 2
            else:
                i += 1
        return rounds


@dataclass(frozen=True)
class Skipped:
    relation_id: str
    reason: str


@dataclass(frozen=True)
class Retryable:
    relation_id: str
    error: str


def template_seed(relation_id: str, run_seed: int) -> int:
    """Stable per-relation draw seed, independent of processing order."""
    digest = hashlib.sha256(relation_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") ^ (run_seed & 0xFFFFFFFFFFFFFFFF)


def generate_sample(
    rel: RelationAnnotation, corpus: Corpus, cfg, gateway: Gateway
) -> InstructionSample | Skipped:
    """Run one relation through context assembly, prompting, and parsing.

    Gateway errors propagate to the caller; everything else resolves to a
    sample or a Skipped record.
    """
    kinds = [k for k in cfg.template_kinds if k != "classifier"]
    template_id = select_template(kinds, template_seed(rel.relation_id, cfg.run_seed))
    template = load_template(template_id)
    ctx = build_image_context(corpus, rel, cfg.overlap_threshold)
    transcript = render_chat(template, ctx, rel)
    tag = f"dataset:{rel.relation_id}"
    resp = gateway.complete(
        CompletionRequest(
            messages=transcript,
            model_name=cfg.model_name,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            request_tag=tag,
        )
    )
    parsed = parse_generation(resp.text)
    if isinstance(parsed, Skip):
        return Skipped(rel.relation_id, "llm_skip")
    if isinstance(parsed, Malformed):
        return Skipped(rel.relation_id, "malformed")
    assert isinstance(parsed, ParsedGeneration)
    if detect_bbox_leak(resp.text):
        return Skipped(rel.relation_id, "bbox_leak")
    turns = (
        ConversationTurn("human", parsed.question, supervised=False),
        ConversationTurn("ai", parsed.answer, supervised=True),
    )
    return InstructionSample(
        sample_id=rel.relation_id,
        image_id=rel.image_id,
        turns=turns,
        seed_relation=rel,
        generator=template_id,
        provenance=tag,
    )


def build_dataset(corpus: Corpus, cfg, gateway: Gateway):
    """Process every relation in id order; failures never abort the run.

    Returns (samples, skipped, retryable): exported samples sorted by
    sample_id, skip records, and gateway failures for a retry manifest.
    The three counts always add up to the relation count.
    """
    samples: list[InstructionSample] = []
    skipped: list[Skipped] = []
    retryable: list[Retryable] = []
    companion = load_companion(cfg.companion_file) if cfg.companion_file else {}
    for rel in sorted(corpus.relations, key=lambda r: r.relation_id):
        try:
            result = generate_sample(rel, corpus, cfg, gateway)
        except GatewayError as exc:
            logger.warning("relation %s failed: %s", rel.relation_id, exc)
            retryable.append(Retryable(rel.relation_id, str(exc)))
            continue
        if isinstance(result, Skipped):
            skipped.append(result)
            continue
        if companion:
            result = augment_with_multiround(result, companion)
        samples.append(result)
    samples.sort(key=lambda s: s.sample_id)
    assert len(samples) + len(skipped) + len(retryable) == len(corpus.relations)
    return samples, skipped, retryable


def _validate_companion_turns(turns: list[dict], where: str):
    if not turns:
        raise MalformedCompanion(f"{where}: empty conversation")
    for i, turn in enumerate(turns):
        expected = "human" if i % 2 == 0 else "ai"
        role = turn.get("role")
        if role != expected:
            raise MalformedCompanion(f"{where}: turn {i} has role {role!r}, expected {expected!r}")
        if not turn.get("text"):
            raise MalformedCompanion(f"{where}: turn {i} has no text")


def load_companion(path: str) -> dict[str, list[list[dict]]]:
    """Companion conversations: JSONL of {image_id, turns: [{role, text}...]},
    possibly several lines per image."""
    by_image: dict[str, list[list[dict]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON: {exc}") from exc
            if "image_id" not in rec or "turns" not in rec:
                raise ParseError(path, lineno, "need image_id and turns")
            _validate_companion_turns(rec["turns"], f"{path}:{lineno}")
            by_image.setdefault(rec["image_id"], []).append(rec["turns"])
    return by_image


def augment_with_multiround(
    sample: InstructionSample, companion: dict[str, list[list[dict]]]
) -> InstructionSample:
    """Append companion conversations for the sample's image after the
    generated QA pair; ai turns supervised, human turns not."""
    conversations = companion.get(sample.image_id)
    if not conversations:
        return sample
    extra = []
    for idx, turns in enumerate(conversations):
        _validate_companion_turns(turns, f"companion[{sample.image_id}][{idx}]")
        for turn in turns:
            extra.append(
                ConversationTurn(
                    role=turn["role"], text=turn["text"], supervised=turn["role"] == "ai"
                )
            )
    return InstructionSample(
        sample_id=sample.sample_id,
        image_id=sample.image_id,
        turns=sample.turns + tuple(extra),
        seed_relation=sample.seed_relation,
        generator=sample.generator,
        provenance=sample.provenance,
    )


def render_for_model(sample: InstructionSample, model_template_id: str) -> str:
    """Fill a model family's conversation template with the sample's rounds.

    The first round substitutes into the full template; later rounds repeat
    the per-round portion. instructblip accepts a single round only, so extra
    rounds are dropped with a warning.
    """
    rounds = sample.qa_rounds()
    if not rounds:
        raise PipelineError(f"sample {sample.sample_id} has no QA round")
    if model_template_id == "llava_llama2":
        parts = [_fill(_LLAVA_FIRST, rounds[0])]
        parts.extend(_fill(_LLAVA_NEXT, r) for r in rounds[1:])
        return " ".join(parts)
    if model_template_id == "mplug_owl":
        parts = [_MPLUG_HEADER, _fill(_MPLUG_FIRST, rounds[0])]
        parts.extend(_fill(_MPLUG_NEXT, r) for r in rounds[1:])
        return "\n".join(parts)
    if model_template_id == "instructblip":
        if len(rounds) > 1:
            logger.warning(
                "sample %s has %d rounds; instructblip keeps only the first",
                sample.sample_id,
                len(rounds),
            )
        return _fill(_INSTRUCTBLIP, rounds[0])
    raise PipelineError(f"unknown model template {model_template_id!r}")


def _fill(template: str, qa: tuple[str, str]) -> str:
    question, answer = qa
    return template.replace("<question>", question).replace("<answer>", answer)


def sample_to_json(sample: InstructionSample) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "sample_id": sample.sample_id,
        "image_id": sample.image_id,
        "turns": [
            {"role": t.role, "text": t.text, "supervised": t.supervised} for t in sample.turns
        ],
        "seed_relation": relation_to_json(sample.seed_relation),
        "generator": sample.generator,
        "provenance": sample.provenance,
    }


def sample_from_json(rec: dict, source: str = "<memory>", line: int = 0) -> InstructionSample:
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(source, line, f"unsupported schema_version {rec.get('schema_version')!r}")
    turns = tuple(
        ConversationTurn(role=t["role"], text=t["text"], supervised=t["supervised"])
        for t in rec["turns"]
    )
    return InstructionSample(
        sample_id=rec["sample_id"],
        image_id=rec["image_id"],
        turns=turns,
        seed_relation=relation_from_json(rec["seed_relation"], source, line),
        generator=rec["generator"],
        provenance=rec["provenance"],
    )


def export_jsonl(samples, path) -> int:
    """Write samples (already ordered) one JSON object per line."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_json(sample), ensure_ascii=False) + "\n")
            count += 1
    return count


def import_jsonl(path) -> list[InstructionSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc
            samples.append(sample_from_json(rec, str(path), lineno))
    return samples
