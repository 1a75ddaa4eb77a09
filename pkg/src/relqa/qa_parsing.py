"""Parsing of model text: QA extraction, skip/refusal detection, box leakage,
hallucination-type classification, and yes/no normalization.

Generations end with the fixed block

    (Other analysis ...)
    Question: <question>
    Answer: <answer>

Everything here is pure string-in/value-out.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass

DEFAULT_REFUSAL_PHRASES = ("refuse to ask", "not worth a question")

# 2-4 comma-separated decimals in brackets, e.g. [0.406, 0.228, 0.612, 0.754]
_BBOX = re.compile(r"\[\s*\d+\.\d+(?:\s*,\s*\d+\.\d+){1,3}\s*\]")

_QUESTION = re.compile(r"^\s*question:\s*", re.IGNORECASE)
_ANSWER = re.compile(r"^\s*answer:\s*", re.IGNORECASE)


@dataclass(frozen=True)
class ParsedGeneration:
    analysis: str
    question: str
    answer: str


@dataclass(frozen=True)
class Skip:
    reason: str = "skip"


@dataclass(frozen=True)
class Malformed:
    reason: str


@dataclass(frozen=True)
class YesNoVerdict:
    verdict: str
    confident: bool

    def __post_init__(self):
        if self.verdict not in ("positive", "negative"):
            raise ValueError(self.verdict)


HALLUCINATION_TYPES = ("category", "attribute", "relation")


def _is_skip_line(line: str) -> bool:
    return line.strip().strip("\"'.,!").lower() == "skip"


def parse_generation(text: str, refusal_phrases=DEFAULT_REFUSAL_PHRASES):
    """Extract (analysis, question, answer) from a generation.

    Returns ParsedGeneration, Skip, or Malformed. The LAST line starting with
    "Question:" anchors the pair; the answer runs from the first subsequent
    "Answer:" line to the next blank line or end of text.
    """
    if text.strip().lower() == "skip":
        return Skip()
    lines = text.splitlines()
    if any(_is_skip_line(line) for line in lines):
        return Skip()

    q_idx = None
    for i, line in enumerate(lines):
        if _QUESTION.match(line):
            q_idx = i
    if q_idx is None:
        lowered = text.lower()
        for phrase in refusal_phrases:
            if phrase.lower() in lowered:
                return Skip(reason="refusal")
        return Malformed("no question")

    a_idx = None
    for i in range(q_idx + 1, len(lines)):
        if _ANSWER.match(lines[i]):
            a_idx = i
            break
    if a_idx is None:
        return Malformed("no answer")

    question_parts = [_QUESTION.sub("", lines[q_idx], count=1)]
    for line in lines[q_idx + 1 : a_idx]:
        question_parts.append(line)
    question = "\n".join(question_parts).strip()

    answer_parts = [_ANSWER.sub("", lines[a_idx], count=1)]
    for line in lines[a_idx + 1 :]:
        if not line.strip():
            break
        answer_parts.append(line)
    answer = "\n".join(answer_parts).strip()

    if not question or not answer:
        return Malformed("empty field")
    analysis = "\n".join(lines[:q_idx]).strip()
    return ParsedGeneration(analysis=analysis, question=question, answer=answer)


def detect_bbox_leak(text: str) -> bool:
    """True when the text carries a bracketed coordinate list (2-4 decimals)."""
    return _BBOX.search(text) is not None


def parse_classification(text: str):
    """Map a classifier reply to one of the three hallucination types.

    The first line beginning "1.", "2." or "3." decides; anything else is
    unclassified (None).
    """
    for line in text.splitlines():
        stripped = line.lstrip()
        if stripped.startswith("1."):
            return "category"
        if stripped.startswith("2."):
            return "attribute"
        if stripped.startswith("3."):
            return "relation"
    return None


def normalize_yesno(response: str) -> YesNoVerdict:
    """Binary verdict from a free-form model answer.

    A leading yes/no word decides confidently. Failing that, a standalone
    "yes" xor "no" anywhere in the text decides without confidence;
    fully ambiguous text defaults to negative without confidence.
    """
    lowered = response.strip().lower()
    tokens = lowered.split()
    if tokens:
        first = tokens[0].strip(string.punctuation)
        if first == "yes":
            return YesNoVerdict("positive", confident=True)
        if first == "no":
            return YesNoVerdict("negative", confident=True)
    has_yes = re.search(r"\byes\b", lowered) is not None
    has_no = re.search(r"\bno\b", lowered) is not None
    if has_yes and not has_no:
        return YesNoVerdict("positive", confident=False)
    if has_no and not has_yes:
        return YesNoVerdict("negative", confident=False)
    return YesNoVerdict("negative", confident=False)
