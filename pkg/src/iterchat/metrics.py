"""The four extraction metrics and the corpus evaluation runner.

Exact match and F1 compare preference states directly; the edit-distance and
BLEU metrics compare the canonical serializations after a filter step.

F1 granularity is the normalized (slot, value) pair, micro-averaged over the
corpus from summed TP/FP/FN.  Absolute scores depend on this choice.

Filter step for the token metrics: case-fold, strip punctuation, split on
whitespace and structure boundaries.  The separators ``=`` ``;`` ``,`` are
kept as standalone tokens (they carry slot/value structure); brackets only
delimit and are dropped.  ``color=[red]`` therefore filters to three tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import DatasetError
from .state import PreferenceState, canonicalize, states_equal

_SEPARATOR_TOKENS = {"=", ";", ","}
_BOUNDARY_CHARS = {"=", ";", ",", "[", "]"}


def exact_match(pred: PreferenceState, gold: PreferenceState) -> int:
    return 1 if states_equal(pred, gold) else 0


@dataclass(frozen=True)
class F1Result:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


def _pair_set(state: PreferenceState) -> set[tuple[str, str]]:
    pairs = set()
    for slot in state.slots():
        for value in state.values(slot):
            pairs.add((slot.strip().casefold(), value.strip().casefold()))
    return pairs


def slot_f1(pred: PreferenceState, gold: PreferenceState) -> F1Result:
    """Precision/recall/F1 over normalized (slot, value) pairs.

    Empty vs empty counts as a perfect prediction (precision = recall = 1),
    so a correct "no preferences yet" first turn is not penalized.
    """
    pred_pairs = _pair_set(pred)
    gold_pairs = _pair_set(gold)
    tp = len(pred_pairs & gold_pairs)
    fp = len(pred_pairs - gold_pairs)
    fn = len(gold_pairs - pred_pairs)
    precision, recall, f1 = _prf(tp, fp, fn)
    return F1Result(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp + fp == 0:
        precision = 1.0 if fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 1.0 if fp == 0 else 0.0
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def filter_tokens(text: str) -> list[str]:
    """The token filter shared by the edit-distance and BLEU metrics."""
    tokens: list[str] = []
    word: list[str] = []

    def flush():
        if word:
            tokens.append("".join(word))
            word.clear()

    for ch in text.casefold():
        if ch.isspace():
            flush()
        elif ch in _BOUNDARY_CHARS:
            flush()
            if ch in _SEPARATOR_TOKENS:
                tokens.append(ch)
        elif ch.isalnum():
            word.append(ch)
        # other punctuation is stripped
    flush()
    return tokens


def token_edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Unit-cost Levenshtein distance over token sequences (iterative DP)."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, tok_b in enumerate(b, start=1):
            if tok_a == tok_b:
                current[j] = previous[j - 1]
            else:
                current[j] = 1 + min(previous[j], current[j - 1], previous[j - 1])
        previous = current
    return previous[-1]


def fed(pred_text: str, gold_text: str) -> int:
    """Filtered edit distance between two canonical state serializations."""
    return token_edit_distance(filter_tokens(pred_text), filter_tokens(gold_text))


def bleu1(candidate_tokens: Sequence[str], reference_tokens: Sequence[str]) -> float:
    """Unigram BLEU: clipped precision times brevity penalty."""
    if not reference_tokens:
        raise DatasetError("bleu1 reference must be non-empty")
    if not candidate_tokens:
        return 0.0
    ref_counts: dict[str, int] = {}
    for tok in reference_tokens:
        ref_counts[tok] = ref_counts.get(tok, 0) + 1
    cand_counts: dict[str, int] = {}
    for tok in candidate_tokens:
        cand_counts[tok] = cand_counts.get(tok, 0) + 1
    clipped = sum(min(count, ref_counts.get(tok, 0)) for tok, count in cand_counts.items())
    precision = clipped / len(candidate_tokens)
    if len(candidate_tokens) >= len(reference_tokens):
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - len(reference_tokens) / len(candidate_tokens))
    return precision * brevity


@dataclass(frozen=True)
class RecordScore:
    record_id: str
    em: int
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    fed: int
    bleu1: float

    def to_json_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "em": self.em,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fed": self.fed,
            "bleu1": self.bleu1,
        }


@dataclass(frozen=True)
class EvalReport:
    per_record: tuple[RecordScore, ...]
    em_rate: float
    micro_f1: float
    mean_fed: float
    mean_bleu1: float
    failed_parse_count: int

    def to_json_dict(self) -> dict:
        return {
            "per_record": [r.to_json_dict() for r in self.per_record],
            "corpus": {
                "em_rate": self.em_rate,
                "micro_f1": self.micro_f1,
                "mean_fed": self.mean_fed,
                "mean_bleu1": self.mean_bleu1,
                "failed_parse_count": self.failed_parse_count,
            },
        }

    def to_table(self) -> str:
        header = f"{'record_id':<24} {'em':>3} {'prec':>6} {'rec':>6} {'f1':>6} {'fed':>4} {'bleu1':>6}"
        lines = [header, "-" * len(header)]
        for r in self.per_record:
            lines.append(
                f"{r.record_id:<24} {r.em:>3} {r.precision:>6.3f} {r.recall:>6.3f}"
                f" {r.f1:>6.3f} {r.fed:>4} {r.bleu1:>6.3f}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"corpus: em_rate={self.em_rate:.4f} micro_f1={self.micro_f1:.4f}"
            f" mean_fed={self.mean_fed:.4f} mean_bleu1={self.mean_bleu1:.4f}"
            f" failed_parses={self.failed_parse_count}"
        )
        return "\n".join(lines)


@dataclass(frozen=True)
class Prediction:
    record_id: str
    state: PreferenceState
    parse_status: str = "ok"


def evaluate_corpus(
    preds: Sequence[Prediction],
    golds: Sequence[tuple[str, PreferenceState]],
) -> EvalReport:
    """Score every gold record against its prediction.

    A gold record without a prediction is scored against the empty state and
    counted as a failed parse.  Duplicate ids on either side are an error.
    The token metrics run on the canonical serializations; an empty gold
    serialization scores BLEU 1.0 against an empty prediction, 0.0 otherwise
    (point convention, since BLEU's reference must normally be non-empty).
    """
    pred_by_id: dict[str, Prediction] = {}
    for pred in preds:
        if pred.record_id in pred_by_id:
            raise DatasetError(f"duplicate prediction for record id {pred.record_id!r}")
        pred_by_id[pred.record_id] = pred
    gold_ids = set()
    for record_id, _ in golds:
        if record_id in gold_ids:
            raise DatasetError(f"duplicate gold record id {record_id!r}")
        gold_ids.add(record_id)
    unknown = set(pred_by_id) - gold_ids
    if unknown:
        raise DatasetError(f"predictions for unknown record ids: {sorted(unknown)}")

    scores = []
    total_tp = total_fp = total_fn = 0
    failed = 0
    for record_id, gold in golds:
        pred = pred_by_id.get(record_id)
        if pred is None:
            pred = Prediction(record_id, PreferenceState.empty(), parse_status="failed")
        if pred.parse_status == "failed":
            failed += 1
        f1_result = slot_f1(pred.state, gold)
        total_tp += f1_result.tp
        total_fp += f1_result.fp
        total_fn += f1_result.fn
        pred_text = canonicalize(pred.state)
        gold_text = canonicalize(gold)
        cand_tokens = filter_tokens(pred_text)
        ref_tokens = filter_tokens(gold_text)
        if ref_tokens:
            bleu = bleu1(cand_tokens, ref_tokens)
        else:
            bleu = 1.0 if not cand_tokens else 0.0
        scores.append(
            RecordScore(
                record_id=record_id,
                em=exact_match(pred.state, gold),
                precision=f1_result.precision,
                recall=f1_result.recall,
                f1=f1_result.f1,
                tp=f1_result.tp,
                fp=f1_result.fp,
                fn=f1_result.fn,
                fed=fed(pred_text, gold_text),
                bleu1=bleu,
            )
        )

    n = len(scores)
    _, _, micro = _prf(total_tp, total_fp, total_fn)
    return EvalReport(
        per_record=tuple(scores),
        em_rate=sum(s.em for s in scores) / n if n else 0.0,
        micro_f1=micro,
        mean_fed=sum(s.fed for s in scores) / n if n else 0.0,
        mean_bleu1=sum(s.bleu1 for s in scores) / n if n else 0.0,
        failed_parse_count=failed,
    )
