"""Span-classification mention detector with table-aware gazetteer filtering.

Every candidate span up to a length cap is scored against the full label set;
unannotated spans train toward NONE. A span is represented by the context
vector, its boundary token vectors, and a learned length embedding. Token
vectors are bag-of-hashed-features projections, so the model has no external
embedding dependency.

The gazetteer maps normalized surfaces of column display names (schema
entries) and distinct cell values (cell entries) to their source. At decode
time matched spans are label-constrained (schema -> column roles, cell ->
literal value) and other predicted mentions overlapping a match are
suppressed. That filter is a pure function of the score matrix, which keeps
its guarantees checkable under arbitrary distributions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import TableData, gazetteer_surfaces
from .annotate import TypedSpan
from .errors import EmptyTrainingSet
from .optim import Adam, Params
from .text import char_ngrams, feature_id, is_number_string, normalize_surface

# Label inventory lives in dataset.py so annotation and modeling agree.
from .dataset import COLUMN_LABELS, LABEL_INDEX, LABELS, EntityLabel

SOURCE_SCHEMA = "schema"
SOURCE_CELL = "cell"
_ALLOWED = {
    SOURCE_SCHEMA: tuple(LABEL_INDEX[lab] for lab in COLUMN_LABELS),
    SOURCE_CELL: (LABEL_INDEX[EntityLabel.LITERAL_VALUE],),
}
_NONE_IDX = LABEL_INDEX[EntityLabel.NONE]


@dataclass
class NerConfig:
    dim: int = 24
    len_dim: int = 8
    feat_dim: int = 1 << 15
    max_span_len: int = 8
    seed: int = 13
    # Ablation switches: drop schema or cell surfaces from both the
    # gazetteer features and the decode-time filter.
    use_schema: bool = True
    use_cell: bool = True

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NerConfig":
        return cls(**json.loads(text))


class Gazetteer:
    """Normalized surface -> source map plus token sets for features."""

    def __init__(self, entries: dict[str, str],
                 schema_tokens: set[str], cell_tokens: set[str]):
        self.entries = entries
        self.schema_tokens = schema_tokens
        self.cell_tokens = cell_tokens

    @classmethod
    def build(cls, table: TableData, use_schema: bool = True,
              use_cell: bool = True) -> "Gazetteer":
        schema_surfaces, cell_surfaces = gazetteer_surfaces(table)
        entries: dict[str, str] = {}
        schema_tokens: set[str] = set()
        cell_tokens: set[str] = set()
        if use_cell:
            for surface in cell_surfaces:
                norm = normalize_surface(surface)
                if norm:
                    entries[norm] = SOURCE_CELL
                    cell_tokens.update(norm.split())
        if use_schema:
            # Schema entries overwrite cell entries on collision.
            for surface in schema_surfaces:
                norm = normalize_surface(surface)
                if norm:
                    entries[norm] = SOURCE_SCHEMA
                    schema_tokens.update(norm.split())
        return cls(entries, schema_tokens, cell_tokens)

    @classmethod
    def empty(cls) -> "Gazetteer":
        return cls({}, set(), set())

    def lookup(self, surface: str) -> str | None:
        norm = normalize_surface(surface)
        if not norm:
            return None
        return self.entries.get(norm)


@dataclass(frozen=True)
class GazetteerMatch:
    start: int
    end: int
    source: str


def enumerate_spans(n_tokens: int, max_span_len: int) -> list[tuple[int, int]]:
    spans = []
    for start in range(n_tokens):
        for end in range(start + 1, min(start + max_span_len, n_tokens) + 1):
            spans.append((start, end))
    return spans


def gazetteer_matches(tokens: Sequence[str], gazetteer: Gazetteer,
                      max_span_len: int) -> list[GazetteerMatch]:
    matches = []
    for start, end in enumerate_spans(len(tokens), max_span_len):
        source = gazetteer.lookup(" ".join(tokens[start:end]))
        if source is not None:
            matches.append(GazetteerMatch(start, end, source))
    return matches


def _overlaps(a_start: int, a_end: int, b_start: int, b_end: int) -> bool:
    return a_start < b_end and b_start < a_end


@dataclass(frozen=True)
class PredictedMention:
    start: int
    end: int
    label: EntityLabel
    score: float


def constrained_label_decode(
    spans: Sequence[tuple[int, int]],
    probs: np.ndarray,
    matches: Sequence[GazetteerMatch],
    apply_filter: bool = True,
) -> list[PredictedMention]:
    """Pure decode over a span/probability grid.

    With the filter on, every gazetteer-matched span surfaces with a label
    from its allowed set, even when matches overlap one another; predicted
    mentions that overlap a match and are not themselves matched are
    suppressed. Remaining mentions are picked greedily by score without
    overlap.
    """
    span_index = {span: i for i, span in enumerate(spans)}
    kept = list(matches) if apply_filter else []
    mentions: list[PredictedMention] = []
    for m in kept:
        row = probs[span_index[(m.start, m.end)]]
        allowed = _ALLOWED[m.source]
        best = max(allowed, key=lambda j: (row[j], -j))
        mentions.append(
            PredictedMention(m.start, m.end, LABELS[best], float(row[best]))
        )

    matched_spans = {(m.start, m.end) for m in kept}
    candidates = []
    for i, (start, end) in enumerate(spans):
        if (start, end) in matched_spans:
            continue
        row = probs[i]
        best = int(np.argmax(row))
        if best == _NONE_IDX:
            continue
        if any(_overlaps(start, end, m.start, m.end) for m in kept):
            continue
        candidates.append(
            PredictedMention(start, end, LABELS[best], float(row[best]))
        )
    candidates.sort(key=lambda c: (-c.score, c.start, c.end, LABEL_INDEX[c.label]))
    for cand in candidates:
        if all(not _overlaps(cand.start, cand.end, m.start, m.end)
               for m in mentions):
            mentions.append(cand)
    mentions.sort(key=lambda m: (m.start, m.end, LABEL_INDEX[m.label]))
    return mentions


@dataclass
class NerExample:
    tokens: list[str]
    gazetteer: Gazetteer
    gold_spans: list[TypedSpan] = field(default_factory=list)
    # derived, filled lazily by the model; excluded from equality
    _prep: Optional[tuple] = field(default=None, repr=False, compare=False)

    def label_of(self, start: int, end: int) -> int:
        for span in self.gold_spans:
            if span.start == start and span.end == end:
                return LABEL_INDEX[span.label]
        return _NONE_IDX


class NerModel:
    def __init__(self, config: NerConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        d, ld = config.dim, config.len_dim
        scale = 0.1
        self.params: Params = {
            "P": rng.normal(0.0, scale, size=(config.feat_dim, d)),
            "LEN": rng.normal(0.0, scale, size=(config.max_span_len, ld)),
            "W": rng.normal(0.0, scale, size=(len(LABELS), 3 * d + ld)),
            "b": np.zeros(len(LABELS)),
        }

    # -- features ---------------------------------------------------------

    def token_feature_ids(self, tokens: Sequence[str],
                          gazetteer: Gazetteer) -> list[list[int]]:
        cfg = self.config
        out = []
        for tok in tokens:
            low = tok.lower()
            norm = normalize_surface(tok)
            parts = [("tok", low)]
            parts.extend(("3g", g) for g in char_ngrams(low, 3))
            if any(ch.isdigit() for ch in tok):
                parts.append(("has_digit",))
            if is_number_string(low):
                parts.append(("is_number",))
            if tok[:1].isupper():
                parts.append(("cap",))
            if norm and norm in gazetteer.schema_tokens:
                parts.append(("in_schema",))
            if norm and norm in gazetteer.cell_tokens:
                parts.append(("in_cell",))
            out.append([feature_id(cfg.feat_dim, cfg.seed, *p) for p in parts])
        return out

    def encode(self, tokens: Sequence[str],
               gazetteer: Gazetteer) -> tuple[np.ndarray, np.ndarray, list[list[int]]]:
        ids = self.token_feature_ids(tokens, gazetteer)
        P = self.params["P"]
        X = np.stack([P[row].mean(axis=0) for row in ids])
        ctx = X.mean(axis=0)
        return X, ctx, ids

    def _span_arrays(
        self, spans: Sequence[tuple[int, int]]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        starts = np.array([s for s, _ in spans], dtype=np.int64)
        lasts = np.array([e - 1 for _, e in spans], dtype=np.int64)
        len_idx = np.minimum(lasts - starts + 1, self.config.max_span_len) - 1
        return starts, lasts, len_idx

    def _span_matrix(self, starts: np.ndarray, lasts: np.ndarray,
                     len_idx: np.ndarray, X: np.ndarray,
                     ctx: np.ndarray) -> np.ndarray:
        LEN = self.params["LEN"]
        ctx_block = np.broadcast_to(ctx, (len(starts), len(ctx)))
        return np.hstack([ctx_block, X[starts], X[lasts], LEN[len_idx]])

    # -- scoring ----------------------------------------------------------

    def span_log_probs(
        self, tokens: Sequence[str], gazetteer: Gazetteer
    ) -> tuple[list[tuple[int, int]], np.ndarray]:
        spans = enumerate_spans(len(tokens), self.config.max_span_len)
        X, ctx, _ = self.encode(tokens, gazetteer)
        E = self._span_matrix(*self._span_arrays(spans), X, ctx)
        logits = E @ self.params["W"].T + self.params["b"]
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return spans, logits - logz

    def decode(self, tokens: Sequence[str], gazetteer: Gazetteer,
               use_filter: bool = True) -> list[PredictedMention]:
        if not tokens:
            return []
        spans, logp = self.span_log_probs(tokens, gazetteer)
        matches = gazetteer_matches(tokens, gazetteer, self.config.max_span_len)
        return constrained_label_decode(spans, np.exp(logp), matches,
                                        apply_filter=use_filter)

    # -- training ---------------------------------------------------------

    def _prepared(self, ex: NerExample):
        """Per-example constants: feature ids, span index arrays, gold vector.
        Keyed by the hashing config so examples can move between models."""
        cfg = self.config
        key = (cfg.feat_dim, cfg.seed, cfg.max_span_len)
        if ex._prep is None or ex._prep[0] != key:
            spans = enumerate_spans(len(ex.tokens), cfg.max_span_len)
            ids = self.token_feature_ids(ex.tokens, ex.gazetteer)
            starts, lasts, len_idx = self._span_arrays(spans)
            gold = np.array([ex.label_of(s, e) for s, e in spans], dtype=np.int64)
            ex._prep = (key, ids, starts, lasts, len_idx, gold)
        return ex._prep[1:]

    def loss_and_grads(self, examples: Sequence[NerExample]) -> tuple[float, Params]:
        """Mean (over examples) of mean-per-span NLL, with full gradients."""
        cfg = self.config
        P, LEN, W, b = (self.params[k] for k in ("P", "LEN", "W", "b"))
        d, ld = cfg.dim, cfg.len_dim
        gP = np.zeros_like(P)
        gLEN = np.zeros_like(LEN)
        gW = np.zeros_like(W)
        gb = np.zeros_like(b)
        total = 0.0
        n_ex = len(examples)
        if n_ex == 0:
            raise EmptyTrainingSet("no mention-detection examples")
        for ex in examples:
            if not ex.tokens:
                continue
            ids, starts, lasts, len_idx, gold = self._prepared(ex)
            X = np.stack([P[row].mean(axis=0) for row in ids])
            ctx = X.mean(axis=0)
            E = self._span_matrix(starts, lasts, len_idx, X, ctx)
            n_spans = len(starts)
            logits = E @ W.T + b
            logits -= logits.max(axis=1, keepdims=True)
            expl = np.exp(logits)
            probs = expl / expl.sum(axis=1, keepdims=True)
            nll = -np.log(probs[np.arange(n_spans), gold] + 1e-300)
            weight = 1.0 / (n_spans * n_ex)
            total += float(nll.sum()) * weight

            dlogits = probs.copy()
            dlogits[np.arange(n_spans), gold] -= 1.0
            dlogits *= weight
            gW += dlogits.T @ E
            gb += dlogits.sum(axis=0)
            dE = dlogits @ W
            dX = np.zeros_like(X)
            np.add.at(dX, starts, dE[:, d:2 * d])
            np.add.at(dX, lasts, dE[:, 2 * d:3 * d])
            np.add.at(gLEN, len_idx, dE[:, 3 * d:3 * d + ld])
            dX += dE[:, :d].sum(axis=0) / len(ex.tokens)
            for t, row_ids in enumerate(ids):
                # add.at, not fancy +=: a row may repeat under hash collisions
                np.add.at(gP, row_ids, dX[t] / len(row_ids))
        return total, {"P": gP, "LEN": gLEN, "W": gW, "b": gb}

    # -- persistence ------------------------------------------------------

    def save(self, path: str) -> None:
        np.savez_compressed(path, config=self.config.to_json(), **self.params)

    @classmethod
    def load(cls, path: str) -> "NerModel":
        data = np.load(path, allow_pickle=False)
        model = cls(NerConfig.from_json(str(data["config"])))
        for key in model.params:
            model.params[key] = data[key]
        return model


def train_ner(examples: Sequence[NerExample], config: NerConfig,
              epochs: int = 60, lr: float = 0.05) -> tuple[NerModel, list[float]]:
    model = NerModel(config)
    opt = Adam(model.params, lr=lr)
    curve = []
    for _ in range(epochs):
        loss, grads = model.loss_and_grads(examples)
        curve.append(loss)
        opt.step(grads)
    return model, curve


def span_f1(gold: Sequence[Sequence[TypedSpan]],
            predicted: Sequence[Sequence[PredictedMention]]) -> dict[str, float]:
    """Micro F1 over exact (start, end, label) triples, NONE excluded."""
    tp = fp = fn = 0
    for gold_spans, pred in zip(gold, predicted):
        gset = {(s.start, s.end, s.label) for s in gold_spans
                if s.label is not EntityLabel.NONE}
        pset = {(m.start, m.end, m.label) for m in pred
                if m.label is not EntityLabel.NONE}
        tp += len(gset & pset)
        fp += len(pset - gset)
        fn += len(gset - pset)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return {"precision": precision, "recall": recall, "f1": f1,
            "tp": tp, "fp": fp, "fn": fn}
