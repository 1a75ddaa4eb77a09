"""Scoring of model responses against a yes/no benchmark.

Positive class is "yes". Overall precision/recall/F1 cover every item; each
negative subset additionally reports the fraction of its misleading questions
the model affirmed. Ambiguous responses fall back to a negative verdict and
are surfaced as a separate count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

from .bench import BenchmarkItem, NEGATIVE_SUBSETS
from .errors import ParseError, PipelineError
from .gateway import CompletionRequest, Gateway, GatewayError
from .prompts import ChatTranscript
from .qa_parsing import normalize_yesno

logger = logging.getLogger(__name__)


class MissingResponse(PipelineError):
    pass


class DuplicateResponse(PipelineError):
    pass


@dataclass(frozen=True)
class ResponseRecord:
    item_id: str
    response_text: str


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    ambiguous: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvalReport:
    benchmark_name: str
    model_label: str
    precision: Fraction
    recall: Fraction
    f1: Fraction
    per_subset_fp: dict[str, Fraction]
    counts: ConfusionCounts


def read_responses(path) -> list[ResponseRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc
            if "item_id" not in rec or "response_text" not in rec:
                raise ParseError(str(path), lineno, "need item_id and response_text")
            if rec["item_id"] in seen:
                raise DuplicateResponse(rec["item_id"])
            seen.add(rec["item_id"])
            records.append(ResponseRecord(rec["item_id"], rec["response_text"]))
    return records


def write_responses(records, path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {"item_id": rec.item_id, "response_text": rec.response_text},
                    ensure_ascii=False,
                )
                + "\n"
            )
            count += 1
    return count


def score(
    items: list[BenchmarkItem],
    responses: list[ResponseRecord],
    benchmark_name: str = "benchmark",
    model_label: str = "model",
) -> EvalReport:
    """Confusion counts plus derived rates, all in exact rational arithmetic."""
    by_id: dict[str, ResponseRecord] = {}
    for rec in responses:
        if rec.item_id in by_id:
            raise DuplicateResponse(rec.item_id)
        by_id[rec.item_id] = rec
    tp = fp = tn = fn = ambiguous = 0
    subset_pos: dict[str, int] = {s: 0 for s in NEGATIVE_SUBSETS}
    subset_n: dict[str, int] = {s: 0 for s in NEGATIVE_SUBSETS}
    for item in items:
        rec = by_id.get(item.item_id)
        if rec is None:
            raise MissingResponse(item.item_id)
        verdict = normalize_yesno(rec.response_text)
        if not verdict.confident:
            ambiguous += 1
        answered_yes = verdict.verdict == "positive"
        if item.gt_label == "yes":
            tp += answered_yes
            fn += not answered_yes
        else:
            fp += answered_yes
            tn += not answered_yes
        if item.subset in subset_n:
            subset_n[item.subset] += 1
            subset_pos[item.subset] += answered_yes

    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else Fraction(0)
    )
    per_subset_fp = {
        s: (Fraction(subset_pos[s], subset_n[s]) if subset_n[s] else Fraction(0))
        for s in NEGATIVE_SUBSETS
    }
    return EvalReport(
        benchmark_name=benchmark_name,
        model_label=model_label,
        precision=precision,
        recall=recall,
        f1=f1,
        per_subset_fp=per_subset_fp,
        counts=ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn, ambiguous=ambiguous),
    )


def format_percent(value) -> str:
    """Rate -> percentage with one decimal, half-up: 0.812 -> "81.2"."""
    if isinstance(value, Fraction):
        dec = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        dec = Decimal(repr(float(value)))
    return str((dec * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


_COLUMNS = ("FP_cat", "FP_attr", "FP_rela", "F1")


def _display_cells(report: EvalReport) -> tuple[str, str, str, str]:
    return (
        format_percent(report.per_subset_fp["category"]),
        format_percent(report.per_subset_fp["attribute"]),
        format_percent(report.per_subset_fp["relation"]),
        format_percent(report.f1),
    )


def format_report(report: EvalReport, style: str = "markdown") -> str:
    if style == "markdown":
        cells = _display_cells(report)
        lines = [
            "| Model | " + " | ".join(_COLUMNS) + " |",
            "|" + "---|" * (len(_COLUMNS) + 1),
            f"| {report.model_label} | " + " | ".join(cells) + " |",
            "",
            f"precision {format_percent(report.precision)}, "
            f"recall {format_percent(report.recall)}, "
            f"ambiguous responses: {report.counts.ambiguous}",
        ]
        return "\n".join(lines) + "\n"
    if style == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            [
                "model",
                "benchmark",
                "precision",
                "recall",
                "f1",
                "fp_category",
                "fp_attribute",
                "fp_relation",
                "tp",
                "fp",
                "tn",
                "fn",
                "ambiguous",
                *(f"display_{c}" for c in _COLUMNS),
            ]
        )
        writer.writerow(
            [
                report.model_label,
                report.benchmark_name,
                str(report.precision),
                str(report.recall),
                str(report.f1),
                str(report.per_subset_fp["category"]),
                str(report.per_subset_fp["attribute"]),
                str(report.per_subset_fp["relation"]),
                report.counts.tp,
                report.counts.fp,
                report.counts.tn,
                report.counts.fn,
                report.counts.ambiguous,
                *_display_cells(report),
            ]
        )
        return buf.getvalue()
    raise PipelineError(f"unknown report style {style!r}")


def parse_csv_report(text: str) -> EvalReport:
    """Inverse of the csv style, for archival round-trips."""
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise ParseError("<csv>", 1, "need a header and a data row")
    rec = dict(zip(rows[0], rows[1]))
    counts = ConfusionCounts(
        tp=int(rec["tp"]),
        fp=int(rec["fp"]),
        tn=int(rec["tn"]),
        fn=int(rec["fn"]),
        ambiguous=int(rec["ambiguous"]),
    )
    return EvalReport(
        benchmark_name=rec["benchmark"],
        model_label=rec["model"],
        precision=Fraction(rec["precision"]),
        recall=Fraction(rec["recall"]),
        f1=Fraction(rec["f1"]),
        per_subset_fp={
            "category": Fraction(rec["fp_category"]),
            "attribute": Fraction(rec["fp_attribute"]),
            "relation": Fraction(rec["fp_relation"]),
        },
        counts=counts,
    )


def load_external_benchmark(path) -> list[BenchmarkItem]:
    """Accept third-party yes/no benchmark files: JSONL with question plus a
    label field ("label" or "answer"), mapped into subset "external"."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc
            label = str(rec.get("label", rec.get("answer", ""))).strip().lower()
            if label not in ("yes", "no"):
                raise ParseError(str(path), lineno, f"label must be yes/no, got {label!r}")
            question = rec.get("question") or rec.get("text")
            if not question:
                raise ParseError(str(path), lineno, "missing question text")
            item_id = str(
                rec.get("item_id") or rec.get("question_id") or rec.get("id") or lineno
            )
            items.append(
                BenchmarkItem(
                    item_id=item_id,
                    image_id=str(rec.get("image_id") or rec.get("image") or ""),
                    question=question,
                    gt_label=label,
                    subset="external",
                )
            )
    return items


def collect_responses(items: list[BenchmarkItem], cfg, gateway: Gateway):
    """Query a model endpoint once per benchmark item.

    The question is the sole human message, with the image reference spliced
    in via cfg.image_ref_template ("{image_id}" and "{question}"
    placeholders). Returns (records, retryable) with records ordered by
    item_id.
    """
    records: list[ResponseRecord] = []
    retryable: list[tuple[str, str]] = []
    system_text = cfg.eval_system_prompt or (
        "Answer the question about the image with yes or no."
    )
    for item in sorted(items, key=lambda i: i.item_id):
        human = cfg.image_ref_template.format(image_id=item.image_id, question=item.question)
        transcript = ChatTranscript(
            messages=(("system", system_text), ("human", human))
        )
        try:
            resp = gateway.complete(
                CompletionRequest(
                    messages=transcript,
                    model_name=cfg.model_name,
                    temperature=cfg.temperature,
                    max_tokens=cfg.max_tokens,
                    request_tag=f"collect:{item.item_id}",
                )
            )
        except GatewayError as exc:
            logger.warning("collect failed for %s: %s", item.item_id, exc)
            retryable.append((item.item_id, str(exc)))
            continue
        records.append(ResponseRecord(item_id=item.item_id, response_text=resp.text))
    return records, retryable
