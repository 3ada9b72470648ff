"""Caption hallucination metrics (CHAIR / Cover), binary-probe scoring (POPE),
and paired-run comparison.

Object extraction is a surface-form scan: lowercase word tokens, longest
match first over a synonym lexicon (multi-word surfaces allowed), with a
singular/plural fold, and each matched span consumed exactly once.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import DataError

_WORD_RE = re.compile(r"[a-z0-9]+", re.IGNORECASE)

CHAIR_MODES = ("unique", "mentions")


@dataclass(frozen=True)
class Lexicon:
    """Category names plus a surface-form -> category synonym map.

    Every category maps to itself; surfaces are lowercase; no surface maps
    to two categories.
    """

    categories: frozenset[str]
    synonyms: dict[str, str]

    def __post_init__(self):
        object.__setattr__(self, "categories", frozenset(self.categories))
        for surface, cat in self.synonyms.items():
            if surface != surface.lower():
                raise DataError(f"surface form not lowercase: {surface!r}")
            if cat not in self.categories:
                raise DataError(f"surface {surface!r} maps to unknown category {cat!r}")
        for cat in self.categories:
            if self.synonyms.get(cat) != cat:
                raise DataError(f"category {cat!r} must map to itself")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Iterable[str]]) -> "Lexicon":
        """Build from {category: [surface forms]}; the category is always a surface."""
        synonyms: dict[str, str] = {}
        categories = set()
        for raw_cat, surfaces in mapping.items():
            cat = " ".join(raw_cat.lower().split())
            categories.add(cat)
            for raw in list(surfaces) + [cat]:
                surface = " ".join(raw.lower().split())
                if not surface:
                    raise DataError(f"empty surface form under category {cat!r}")
                prev = synonyms.get(surface)
                if prev is not None and prev != cat:
                    raise DataError(
                        f"surface {surface!r} maps to both {prev!r} and {cat!r}"
                    )
                synonyms[surface] = cat
        return cls(categories=frozenset(categories), synonyms=synonyms)

    def surface_words(self) -> dict[tuple[str, ...], str]:
        return {tuple(s.split()): cat for s, cat in self.synonyms.items()}


@dataclass(frozen=True)
class ObjectMatch:
    surface: str
    category: str
    start: int
    end: int


def _fold_candidates(word: str) -> list[str]:
    # Exact form first, then plural folds: trailing "es", then trailing "s".
    cands = [word]
    if word.endswith("es"):
        cands.append(word[:-2])
    if word.endswith("s"):
        cands.append(word[:-1])
    return cands


def extract_objects(text: str, lexicon: Lexicon) -> tuple[ObjectMatch, ...]:
    """Scan left-to-right, longest match first; matched spans never overlap."""
    table = lexicon.surface_words()
    if not table:
        return ()
    max_words = max(len(k) for k in table)
    tokens = [(m.group(0).lower(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]
    matches: list[ObjectMatch] = []
    i = 0
    while i < len(tokens):
        matched = False
        for n in range(min(max_words, len(tokens) - i), 0, -1):
            words = tuple(tok[0] for tok in tokens[i : i + n])
            for last in _fold_candidates(words[-1]):
                cand = words[:-1] + (last,)
                cat = table.get(cand)
                if cat is not None:
                    matches.append(
                        ObjectMatch(
                            surface=" ".join(cand),
                            category=cat,
                            start=tokens[i][1],
                            end=tokens[i + n - 1][2],
                        )
                    )
                    i += n
                    matched = True
                    break
            if matched:
                break
        if not matched:
            i += 1
    return tuple(matches)


@dataclass(frozen=True)
class CaptionRecord:
    """One generated caption with its extracted object mentions."""

    image_id: str
    text: str
    extracted: tuple[ObjectMatch, ...]

    def __post_init__(self):
        prev_end = -1
        for m in self.extracted:
            if m.start < prev_end:
                raise DataError("extracted spans overlap or are out of order")
            prev_end = m.end

    @classmethod
    def from_text(cls, image_id: str, text: str, lexicon: Lexicon) -> "CaptionRecord":
        return cls(image_id=str(image_id), text=text, extracted=extract_objects(text, lexicon))


@dataclass(frozen=True)
class AnnotationSet:
    """Ground-truth object categories per image id."""

    by_image: dict[str, frozenset[str]]

    @classmethod
    def from_mapping(
        cls, mapping: Mapping[str, Iterable[str]], lexicon: Lexicon | None = None
    ) -> "AnnotationSet":
        by_image = {}
        for image_id, cats in mapping.items():
            if isinstance(cats, str) or not hasattr(cats, "__iter__"):
                raise DataError(
                    f"image {image_id!r}: annotations must be a list of categories"
                )
            cats = frozenset(str(c).lower() for c in cats)
            if lexicon is not None:
                stray = cats - lexicon.categories
                if stray:
                    raise DataError(
                        f"image {image_id!r} annotated with unknown categories {sorted(stray)}"
                    )
            by_image[str(image_id)] = cats
        return cls(by_image=by_image)

    def categories_for(self, image_id: str) -> frozenset[str]:
        try:
            return self.by_image[image_id]
        except KeyError:
            raise DataError(f"no annotations for image {image_id!r}") from None


@dataclass(frozen=True)
class ChairReport:
    mode: str
    hallucinated_objects: int
    generated_objects: int
    hallucinated_captions: int
    captions: int
    mentioned_correct: int
    annotated: int

    @property
    def chair_i(self) -> float:
        return self.hallucinated_objects / self.generated_objects if self.generated_objects else 0.0

    @property
    def chair_s(self) -> float:
        return self.hallucinated_captions / self.captions if self.captions else 0.0

    @property
    def cover(self) -> float:
        return self.mentioned_correct / self.annotated if self.annotated else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "chair_i": self.chair_i,
            "chair_s": self.chair_s,
            "cover": self.cover,
            "counts": {
                "hallucinated_objects": self.hallucinated_objects,
                "generated_objects": self.generated_objects,
                "hallucinated_captions": self.hallucinated_captions,
                "captions": self.captions,
                "mentioned_correct": self.mentioned_correct,
                "annotated": self.annotated,
            },
        }


def chair(
    captions: Sequence[CaptionRecord],
    annotations: AnnotationSet,
    mode: str = "unique",
) -> ChairReport:
    """CHAIRi / CHAIRs / Cover over a caption corpus.

    mode="unique" counts each category once per caption; mode="mentions"
    counts every extraction. Cover is the corpus-wide ratio of correctly
    mentioned annotated objects to annotated objects over the images that
    appear in the corpus.
    """
    if mode not in CHAIR_MODES:
        raise DataError(f"unknown CHAIR mode {mode!r}")
    hallucinated_objects = 0
    generated_objects = 0
    hallucinated_captions = 0
    correct_by_image: dict[str, set[str]] = {}
    for cap in captions:
        annotated = annotations.categories_for(cap.image_id)
        cats = [m.category for m in cap.extracted]
        if mode == "unique":
            cats = list(dict.fromkeys(cats))
        generated_objects += len(cats)
        bad = [c for c in cats if c not in annotated]
        hallucinated_objects += len(bad)
        if bad:
            hallucinated_captions += 1
        correct_by_image.setdefault(cap.image_id, set()).update(
            c for c in cats if c in annotated
        )
    mentioned_correct = sum(len(v) for v in correct_by_image.values())
    annotated_total = sum(
        len(annotations.categories_for(img)) for img in correct_by_image
    )
    return ChairReport(
        mode=mode,
        hallucinated_objects=hallucinated_objects,
        generated_objects=generated_objects,
        hallucinated_captions=hallucinated_captions,
        captions=len(captions),
        mentioned_correct=mentioned_correct,
        annotated=annotated_total,
    )


POPE_SPLITS = ("random", "popular", "adversarial")


@dataclass(frozen=True)
class PopeAnswer:
    question_id: str
    split: str
    gold: str  # "yes" | "no"
    text: str

    def __post_init__(self):
        if self.gold not in ("yes", "no"):
            raise DataError(f"gold must be yes/no, got {self.gold!r}")


def parse_yes_no(text: str) -> str | None:
    """First alphabetic word, case-insensitive; None when not yes/no."""
    m = re.search(r"[a-zA-Z]+", text)
    if m is None:
        return None
    word = m.group(0).lower()
    return word if word in ("yes", "no") else None


@dataclass(frozen=True)
class PopeScores:
    total: int
    parsed: int
    correct: int
    predicted_yes: int
    true_yes: int
    gold_yes: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def yes_rate(self) -> float:
        return self.predicted_yes / self.parsed if self.parsed else 0.0

    @property
    def precision(self) -> float:
        return self.true_yes / self.predicted_yes if self.predicted_yes else 0.0

    @property
    def recall(self) -> float:
        return self.true_yes / self.gold_yes if self.gold_yes else 0.0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "yes_rate": self.yes_rate,
            "precision": self.precision,
            "recall": self.recall,
            "total": self.total,
            "parsed": self.parsed,
        }


@dataclass(frozen=True)
class PopeReport:
    overall: PopeScores
    splits: dict[str, PopeScores] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "splits": {k: v.to_dict() for k, v in sorted(self.splits.items())},
        }


def _score_pope(answers: Sequence[PopeAnswer], parse_rule) -> PopeScores:
    parsed = correct = predicted_yes = true_yes = gold_yes = 0
    for ans in answers:
        gold_is_yes = ans.gold == "yes"
        gold_yes += gold_is_yes
        pred = parse_rule(ans.text)
        if pred is None:
            continue  # unparsed: counted in total, scored incorrect
        parsed += 1
        if pred == "yes":
            predicted_yes += 1
            if gold_is_yes:
                true_yes += 1
        if pred == ans.gold:
            correct += 1
    return PopeScores(
        total=len(answers),
        parsed=parsed,
        correct=correct,
        predicted_yes=predicted_yes,
        true_yes=true_yes,
        gold_yes=gold_yes,
    )


def pope_score(
    answers: Sequence[PopeAnswer],
    parse_rule: Callable[[str], str | None] = parse_yes_no,
) -> PopeReport:
    """Accuracy over all items (unparsed answers score incorrect) and the
    yes-rate over parsed ones, overall and per split."""
    overall = _score_pope(answers, parse_rule)
    splits = {}
    for split in sorted({a.split for a in answers}):
        splits[split] = _score_pope([a for a in answers if a.split == split], parse_rule)
    return PopeReport(overall=overall, splits=splits)


@dataclass(frozen=True)
class ComparisonTable:
    """2x2 outcome fractions for the same captions under two decoders."""

    n: int
    both_correct: float
    base_only_correct: float
    treated_only_correct: float
    both_incorrect: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "both_correct": self.both_correct,
            "base_only_correct": self.base_only_correct,
            "treated_only_correct": self.treated_only_correct,
            "both_incorrect": self.both_incorrect,
        }


def compare_runs(
    base: Mapping[str, bool], treated: Mapping[str, bool]
) -> ComparisonTable:
    """Cross-tabulate per-caption hallucination flags (True = hallucinated)."""
    if set(base) != set(treated):
        missing = sorted(set(base) ^ set(treated))
        raise DataError(f"key sets differ, e.g. {missing[:5]}")
    if not base:
        raise DataError("no captions to compare")
    n = len(base)
    cells = [0, 0, 0, 0]
    for key, b in base.items():
        t = treated[key]
        cells[{(False, False): 0, (False, True): 1, (True, False): 2, (True, True): 3}[(b, t)]] += 1
    return ComparisonTable(
        n=n,
        both_correct=cells[0] / n,
        base_only_correct=cells[1] / n,
        treated_only_correct=cells[2] / n,
        both_incorrect=cells[3] / n,
    )


# ---------------------------------------------------------------------------
# File formats used by the CLI: captions JSONL {image_id, text}, annotations
# JSON {image_id: [categories]}, lexicon JSON {category: [surface forms]},
# POPE questions JSONL {id, split, object, gold}, answers JSONL {id, text}.

def load_lexicon(path: str | Path) -> Lexicon:
    with open(path, encoding="utf-8") as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise DataError(f"{path}: lexicon must be an object of category -> surfaces")
    return Lexicon.from_mapping(mapping)


def load_annotations(path: str | Path, lexicon: Lexicon | None = None) -> AnnotationSet:
    with open(path, encoding="utf-8") as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise DataError(f"{path}: annotations must be an object of image_id -> categories")
    return AnnotationSet.from_mapping(mapping, lexicon)


def _iter_jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc


def load_captions(path: str | Path, lexicon: Lexicon) -> list[CaptionRecord]:
    records = []
    for lineno, obj in _iter_jsonl(path):
        try:
            records.append(CaptionRecord.from_text(obj["image_id"], obj["text"], lexicon))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: caption needs image_id and text") from exc
    return records


def load_pope_answers(questions_path: str | Path, answers_path: str | Path) -> list[PopeAnswer]:
    texts: dict[str, str] = {}
    for lineno, obj in _iter_jsonl(answers_path):
        try:
            texts[str(obj["id"])] = str(obj["text"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{answers_path}:{lineno}: answer needs id and text") from exc
    answers = []
    for lineno, obj in _iter_jsonl(questions_path):
        try:
            qid = str(obj["id"])
            answers.append(
                PopeAnswer(
                    question_id=qid,
                    split=str(obj.get("split", "random")),
                    gold=str(obj["gold"]).lower(),
                    text=texts.get(qid, ""),
                )
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{questions_path}:{lineno}: question needs id and gold") from exc
    return answers
