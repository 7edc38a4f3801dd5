"""Mention-to-table linking as per-group softmax over lexical features.

Column mentions rank every column of the table; literal mentions rank the
table's distinct cell values (capped, first-appearance order). Candidates are
presented to the scorer as segmented inputs: question / mention / candidate
surface for literals, plus column type and a representative cell value for
columns. The representative cell is the one most similar to the question,
which lets value-flavoured phrasing pull in the right column.

Scoring itself is a linear model over a fixed similarity feature vector, so
weights stay inspectable and gradients are exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import COLUMN_LABELS, COLUMN_TYPES, EntityLabel, TableData
from .errors import EmptyTrainingSet
from .optim import Adam, Params
from .text import (
    acronym_score,
    fuzzy_score,
    length_ratio,
    normalize_surface,
    prefix_overlap,
    suffix_overlap,
    token_jaccard,
)

KIND_COLUMN = "column"
KIND_LITERAL = "literal"

MAX_LITERAL_CANDIDATES = 500

FEATURES = (
    "fuzzy", "jaccard", "prefix", "suffix", "acronym", "lenratio",
    "exact", "meta_fuzzy",
    "type_number", "type_string", "type_date",
    "kind_column", "bias",
)
_TYPE_SLOT = {t: FEATURES.index("type_" + t) for t in COLUMN_TYPES}


@dataclass(frozen=True)
class LinkCandidate:
    candidate_id: str
    kind: str
    surface: str
    meta_type: str
    meta_value: str = ""


@dataclass(frozen=True)
class LinkGroup:
    question: str
    mention_surface: str
    kind: str
    candidates: tuple[LinkCandidate, ...]
    gold_id: str | None = None


@dataclass(frozen=True)
class LinkResult:
    candidate_id: str
    kind: str
    score: float


def _representative_cell(cells: Sequence[str], question: str) -> str:
    best = ""
    best_score = -1.0
    for cell in cells:
        score = fuzzy_score(cell, question)
        if score > best_score:
            best, best_score = cell, score
    return best


def generate_candidates(label: EntityLabel, table: TableData,
                        question: str) -> tuple[LinkCandidate, ...]:
    if label in COLUMN_LABELS:
        out = []
        for j, col_id in enumerate(table.column_ids):
            cells = table.column_cells(col_id)
            out.append(LinkCandidate(
                candidate_id=col_id,
                kind=KIND_COLUMN,
                surface=table.column_display_names[j],
                meta_type=table.column_types[j],
                meta_value=_representative_cell(cells, question),
            ))
        return tuple(out)
    if label is EntityLabel.LITERAL_VALUE:
        seen: dict[str, str] = {}
        for j, col_id in enumerate(table.column_ids):
            for cell in table.column_cells(col_id):
                if cell not in seen:
                    seen[cell] = table.column_types[j]
                if len(seen) >= MAX_LITERAL_CANDIDATES:
                    break
            if len(seen) >= MAX_LITERAL_CANDIDATES:
                break
        return tuple(
            LinkCandidate(candidate_id=cell, kind=KIND_LITERAL,
                          surface=cell, meta_type=meta_type)
            for cell, meta_type in seen.items()
        )
    raise ValueError(f"label {label!r} does not take link candidates")


def assemble_input(question: str, mention_surface: str,
                   candidate: LinkCandidate) -> tuple[str, ...]:
    """Segmented scorer input; columns carry two extra metadata segments."""
    base = (question, mention_surface, candidate.surface)
    if candidate.kind == KIND_COLUMN:
        return base + (candidate.meta_type, candidate.meta_value)
    return base


def featurize(mention_surface: str, candidate: LinkCandidate) -> np.ndarray:
    vec = np.zeros(len(FEATURES))
    mention = mention_surface
    surface = candidate.surface
    vec[0] = fuzzy_score(mention, surface)
    vec[1] = token_jaccard(mention, surface)
    vec[2] = prefix_overlap(mention, surface)
    vec[3] = suffix_overlap(mention, surface)
    vec[4] = acronym_score(mention, surface)
    vec[5] = length_ratio(mention, surface)
    vec[6] = 1.0 if normalize_surface(mention) == normalize_surface(surface) else 0.0
    vec[7] = fuzzy_score(mention, candidate.meta_value) if candidate.meta_value else 0.0
    slot = _TYPE_SLOT.get(candidate.meta_type)
    if slot is not None:
        vec[slot] = 1.0
    vec[FEATURES.index("kind_column")] = 1.0 if candidate.kind == KIND_COLUMN else 0.0
    vec[FEATURES.index("bias")] = 1.0
    return vec


def group_features(group: LinkGroup) -> np.ndarray:
    return np.stack([featurize(group.mention_surface, c)
                     for c in group.candidates])


@dataclass
class LinkerConfig:
    seed: int = 29

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LinkerConfig":
        return cls(**json.loads(text))


class LinkerModel:
    def __init__(self, config: LinkerConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config or LinkerConfig()
        rng = rng or np.random.default_rng(self.config.seed)
        self.params: Params = {"w": rng.normal(0.0, 0.1, size=len(FEATURES))}

    def score_candidates(self, group: LinkGroup) -> np.ndarray:
        return group_features(group) @ self.params["w"]

    def link(self, group: LinkGroup) -> LinkResult:
        """Highest score wins; exact ties go to the smaller candidate id."""
        scores = self.score_candidates(group)
        best = min(range(len(scores)),
                   key=lambda i: (-scores[i], group.candidates[i].candidate_id))
        return LinkResult(group.candidates[best].candidate_id,
                          group.kind, float(scores[best]))

    def link_probabilities(self, group: LinkGroup) -> np.ndarray:
        scores = self.score_candidates(group)
        scores = scores - scores.max()
        expl = np.exp(scores)
        return expl / expl.sum()

    def link_with_probability(self, group: LinkGroup) -> tuple[LinkResult, float]:
        """Winner plus its softmax probability, featurizing only once."""
        feats = group_features(group)
        scores = feats @ self.params["w"]
        best = min(range(len(scores)),
                   key=lambda i: (-scores[i], group.candidates[i].candidate_id))
        shifted = scores - scores.max()
        expl = np.exp(shifted)
        prob = float(expl[best] / expl.sum())
        result = LinkResult(group.candidates[best].candidate_id,
                            group.kind, float(scores[best]))
        return result, prob

    def loss_and_grads(self, groups: Sequence[LinkGroup],
                       feats_list: Sequence[np.ndarray] | None = None
                       ) -> tuple[float, Params]:
        """Mean cross-entropy per group against the gold candidate.

        feats_list, when given, must hold group_features(g) per group; the
        trainer precomputes it once because featurization does string work.
        """
        if not groups:
            raise EmptyTrainingSet("no linking groups")
        w = self.params["w"]
        gw = np.zeros_like(w)
        total = 0.0
        for gi, group in enumerate(groups):
            feats = (feats_list[gi] if feats_list is not None
                     else group_features(group))
            scores = feats @ w
            scores -= scores.max()
            expl = np.exp(scores)
            probs = expl / expl.sum()
            gold = next(i for i, c in enumerate(group.candidates)
                        if c.candidate_id == group.gold_id)
            total += -float(np.log(probs[gold] + 1e-300))
            dscores = probs.copy()
            dscores[gold] -= 1.0
            gw += dscores @ feats
        n = len(groups)
        return total / n, {"w": gw / n}

    def save(self, path: str) -> None:
        np.savez_compressed(path, config=self.config.to_json(), **self.params)

    @classmethod
    def load(cls, path: str) -> "LinkerModel":
        data = np.load(path, allow_pickle=False)
        model = cls(LinkerConfig.from_json(str(data["config"])))
        model.params["w"] = data["w"]
        return model


def split_trainable(groups: Sequence[LinkGroup]) -> tuple[list[LinkGroup], dict[str, int]]:
    """Drop groups that cannot teach anything and say why."""
    kept = []
    skipped = {"gold_missing": 0, "singleton": 0}
    for group in groups:
        ids = [c.candidate_id for c in group.candidates]
        if group.gold_id not in ids:
            skipped["gold_missing"] += 1
        elif len(ids) < 2:
            skipped["singleton"] += 1
        else:
            kept.append(group)
    return kept, skipped


def train_nel(groups: Sequence[LinkGroup], config: LinkerConfig | None = None,
              epochs: int = 80, lr: float = 0.2
              ) -> tuple[LinkerModel, list[float], dict[str, int]]:
    trainable, skipped = split_trainable(groups)
    if not trainable:
        raise EmptyTrainingSet("all linking groups were degenerate")
    model = LinkerModel(config)
    opt = Adam(model.params, lr=lr)
    feats_list = [group_features(g) for g in trainable]
    curve = []
    for _ in range(epochs):
        loss, grads = model.loss_and_grads(trainable, feats_list)
        curve.append(loss)
        opt.step(grads)
    return model, curve, skipped
