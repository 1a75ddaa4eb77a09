"""Chat prompt assembly for QA generation and hallucination-type classification.

Three template families ship as text assets under templates/: yesno, wh, and
classifier. Each file holds a system section followed by few-shot human/ai
pairs, delimited by marker lines ("=== system ===" etc.). Rendering is pure;
all randomness is confined to select_template.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources

from .annotations import ImageContext, RelationAnnotation
from .errors import ParseError, PipelineError
from .geometry import BoundingBox

TEMPLATE_IDS = ("yesno", "wh", "classifier")

_MARKER = re.compile(r"^=== (system|human|ai) ===$")


class EmptyPool(PipelineError):
    """select_template was handed no template kinds to choose from."""


class BadTemplate(PipelineError):
    """A template asset violates the expected section structure."""


@dataclass(frozen=True)
class FewShotExample:
    human_text: str
    ai_text: str


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    few_shot: tuple[FewShotExample, ...]


@dataclass(frozen=True)
class ChatTranscript:
    """Ordered chat messages: system first, then strictly alternating
    human/ai turns, ending on a human message."""

    messages: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.messages or self.messages[0][0] != "system":
            raise BadTemplate("transcript must start with a system message")
        for i, (role, text) in enumerate(self.messages[1:], start=1):
            expected = "human" if i % 2 == 1 else "ai"
            if role != expected:
                raise BadTemplate(f"message {i} has role {role!r}, expected {expected!r}")
            if not text:
                raise BadTemplate(f"message {i} is empty")
        if self.messages[-1][0] != "human":
            raise BadTemplate("transcript must end with a human message")

    def to_text(self) -> str:
        parts = [f"=== {role} ===\n{text}\n" for role, text in self.messages]
        return "".join(parts)


def _split_sections(text: str, source: str) -> list[tuple[str, str]]:
    sections: list[tuple[str, str]] = []
    current_role: str | None = None
    current_lines: list[str] = []
    first_marker_line = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _MARKER.match(line)
        if m:
            if current_role is None and any(l.strip() for l in current_lines):
                raise ParseError(source, lineno, "content before the first section marker")
            if current_role is not None:
                sections.append((current_role, "\n".join(current_lines)))
            current_role = m.group(1)
            current_lines = []
            if first_marker_line is None:
                first_marker_line = lineno
        elif current_role is not None:
            current_lines.append(line)
    if current_role is None:
        raise ParseError(source, 1, "no section markers found")
    sections.append((current_role, "\n".join(current_lines)))
    return sections


def parse_template(text: str, template_id: str, source: str = "<string>") -> PromptTemplate:
    """Parse the marker-delimited asset format into a PromptTemplate.

    Section bodies are the lines between markers; the newline separating a
    body from the next marker is not part of the body.
    """
    sections = _split_sections(text, source)
    if sections[0][0] != "system":
        raise BadTemplate(f"{source}: first section must be system, got {sections[0][0]!r}")
    system_text = sections[0][1]
    if not system_text.strip():
        raise BadTemplate(f"{source}: system section is empty")
    rest = sections[1:]
    if len(rest) % 2 != 0:
        raise BadTemplate(f"{source}: few-shot sections must come in human/ai pairs")
    few_shot = []
    for i in range(0, len(rest), 2):
        (role_h, human_text), (role_a, ai_text) = rest[i], rest[i + 1]
        if (role_h, role_a) != ("human", "ai"):
            raise BadTemplate(f"{source}: expected human/ai pair, got {role_h}/{role_a}")
        if not human_text.strip() or not ai_text.strip():
            raise BadTemplate(f"{source}: empty few-shot section")
        few_shot.append(FewShotExample(human_text=human_text, ai_text=ai_text))
    if template_id == "classifier":
        for ex in few_shot:
            if not ex.ai_text.lstrip().startswith(("1.", "2.", "3.")):
                raise BadTemplate(
                    f"{source}: classifier few-shot reply must begin with a category number"
                )
    return PromptTemplate(
        template_id=template_id, system_text=system_text, few_shot=tuple(few_shot)
    )


def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise BadTemplate(f"unknown template id {template_id!r}")
    asset = resources.files(__package__) / "templates" / f"{template_id}.txt"
    text = asset.read_text(encoding="utf-8")
    return parse_template(text, template_id, source=f"templates/{template_id}.txt")


def format_coord(value: float) -> str:
    """Render one relative coordinate with exactly 3 decimals, half-up."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def format_box(box: BoundingBox) -> str:
    return "[" + ", ".join(format_coord(c) for c in box.as_tuple()) + "]"


def render_image_content(ctx: ImageContext) -> str:
    """Build the IMAGE_CONTENT block: captions, objects with boxes, and the
    regional descriptions that overlap the seed relation. Empty sections keep
    their headers with no bullets."""
    blocks = ["IMAGE_CONTENT", "1. The image can be generally describe as:"]
    blocks.extend(f"- {caption}" for caption in ctx.captions)
    blocks.append("2. There are some objects in this image:")
    blocks.extend(f"- {obj.category} {format_box(obj.box)}" for obj in ctx.objects)
    blocks.append(
        "3. There are some regional description that are overlapped with the subject and the object"
    )
    blocks.extend(f"- {region.text} {format_box(region.box)}" for region in ctx.regions)
    return "\n\n".join(blocks)


def render_seed_request(rel: RelationAnnotation) -> str:
    return (
        "Please generate the question-answer pair based on the following relation ship:\n\n"
        f"{rel.subject.category} (with bounding box {format_box(rel.subject.box)}) "
        f"{rel.predicate} "
        f"{rel.object.category} (with bounding box {format_box(rel.object.box)})"
    )


def select_template(kinds, rng_seed: int) -> str:
    """Deterministic uniform draw from the enabled template kinds."""
    pool = sorted(set(kinds))
    if not pool:
        raise EmptyPool("no template kinds enabled")
    unknown = [k for k in pool if k not in TEMPLATE_IDS]
    if unknown:
        raise BadTemplate(f"unknown template kinds: {unknown}")
    return pool[random.Random(rng_seed).randrange(len(pool))]


def _transcript(template: PromptTemplate, final_human: str) -> ChatTranscript:
    messages = [("system", template.system_text)]
    for ex in template.few_shot:
        messages.append(("human", ex.human_text))
        messages.append(("ai", ex.ai_text))
    messages.append(("human", final_human))
    return ChatTranscript(messages=tuple(messages))


def render_chat(
    template: PromptTemplate, ctx: ImageContext, rel: RelationAnnotation
) -> ChatTranscript:
    """Generation prompt: system, few-shot pairs, then the live request built
    from the image context and the seed relation."""
    if template.template_id == "classifier":
        raise BadTemplate("classifier template takes a QA pair, not an image context")
    final_human = render_image_content(ctx) + "\n\n" + render_seed_request(rel)
    return _transcript(template, final_human)


def render_classifier_chat(template: PromptTemplate, qa_text: str) -> ChatTranscript:
    """Classification prompt: the question-answer pair is the final message."""
    if template.template_id != "classifier":
        raise BadTemplate(f"expected classifier template, got {template.template_id!r}")
    if not qa_text.strip():
        raise BadTemplate("empty QA text")
    return _transcript(template, qa_text)


def format_qa_pair(question: str, answer: str) -> str:
    """Canonical QA rendering used as the classifier's final human message."""
    return f"Question: {question}\n\nAnswer: {answer}"
