"""Grammar-constrained structured decoding over hashed state-action features.

Scoring is a log-linear model: each (derivation state, action) pair produces
a sparse feature bag, the action score is the dot with a single weight
vector, and probabilities are softmaxed over the legal action set only.
Legality masking keeps every reachable state expandable: rules that open a
subquery are masked past the nesting cap and rules that need a copy slot are
masked when the matching pool is empty, so constrained decoding cannot emit
an ill-formed query.

Link-derived context enters in two ways: per-column role tags (which clause
a linked mention suggested for the column) and link strength features. Role
tags are dropped for a random fraction of training examples so the decoder
cannot lean on them exclusively; both featurization variants are cached so
epochs stay cheap.

Features split into a static part (depends only on the encoded input and the
action identity) and a small dynamic part (depends on the derivation state).
Static bags are packed per frontier symbol into flat (ids, vals, segment)
arrays once per input; teacher-forced training also caches the per-step
dynamic bags, so an epoch is a handful of vector ops per decision.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import LABEL_INDEX, EntityLabel, TableData
from .errors import IllegalAction, NoCompleteDerivation
from .grammar import (
    COPY_COLUMN,
    COPY_TABLE,
    COPY_VALUE,
    NT_SUBQUERY,
    Action,
    ApplyRule,
    CopyColumn,
    CopyTable,
    CopyValue,
    Derivation,
    Grammar,
    action_signature,
)
from .linker import MAX_LITERAL_CANDIDATES
from .optim import Adam, Params
from .sql import (
    CLAUSE_GROUP,
    CLAUSE_ORDER,
    CLAUSE_SELECT,
    CLAUSE_WHERE,
    TABLE_TOKEN,
    Stmt,
)
from .text import feature_id, fuzzy_score, normalize_surface

MODE_BASELINE = "baseline"
MODE_LINKED_COLUMNS = "linked_columns_only"
MODE_CTF = "column_type_feature"
MODE_ORACLE = "oracle_feature"
MODES = (MODE_BASELINE, MODE_LINKED_COLUMNS, MODE_CTF, MODE_ORACLE)
_ROLE_MODES = (MODE_CTF, MODE_ORACLE)

ROLE_OF_LABEL = {
    EntityLabel.SELECT_COLUMN: CLAUSE_SELECT,
    EntityLabel.WHERE_COLUMN: CLAUSE_WHERE,
    EntityLabel.GROUPBY_COLUMN: CLAUSE_GROUP,
    EntityLabel.ORDERBY_COLUMN: CLAUSE_ORDER,
}


@dataclass(frozen=True)
class LinkedMention:
    """Post-linking view of one mention: role label, resolved target, score."""
    label: EntityLabel
    target: str
    score: float


def build_column_type_features(
    mentions: Sequence[LinkedMention],
) -> tuple[dict[str, str], dict[str, float]]:
    """Per-column role tags. When mentions disagree about a column the one
    with the highest link score wins; exact ties fall back to label order."""
    roles: dict[str, str] = {}
    strength: dict[str, float] = {}
    ordered = sorted(
        (m for m in mentions if m.label in ROLE_OF_LABEL),
        key=lambda m: (-m.score, LABEL_INDEX[m.label], m.target),
    )
    for m in ordered:
        if m.target not in roles:
            roles[m.target] = ROLE_OF_LABEL[m.label]
        strength[m.target] = max(strength.get(m.target, 0.0), m.score)
    return roles, strength


@dataclass
class EncoderOutput:
    """Everything the decoder may condition on for one input, plus feature
    caches so repeated scoring of the same example stays cheap."""
    tokens: list[str]
    question: str
    table_id: str
    mode: str
    column_pool: list[str]
    literal_pool: list[str]
    column_roles: dict[str, str]
    column_link_scores: dict[str, float]
    literal_link_scores: dict[str, float]
    display_fuzzy: dict[str, float]
    literal_in_question: dict[str, bool]
    literal_fuzzy: dict[str, float]
    qtokens: list[str]
    cache: dict = field(default_factory=dict)


def _question_windows(tokens: Sequence[str], width: int = 8) -> set[str]:
    windows = set()
    for i in range(len(tokens)):
        for j in range(i + 1, min(i + width, len(tokens)) + 1):
            norm = normalize_surface(" ".join(tokens[i:j]))
            if norm:
                windows.add(norm)
    return windows


def _literal_pool(table: TableData) -> list[str]:
    seen: list[str] = []
    have = set()
    for col_id in table.column_ids:
        for cell in table.column_cells(col_id):
            if cell not in have:
                have.add(cell)
                seen.append(cell)
            if len(seen) >= MAX_LITERAL_CANDIDATES:
                return seen
    return seen


def encode(
    tokens: Sequence[str],
    table: TableData,
    mentions: Sequence[LinkedMention] = (),
    mode: str = MODE_CTF,
    extra_literals: Sequence[str] = (),
) -> EncoderOutput:
    """Build the decoder's view of one input.

    extra_literals extends the copy pool; the trainer passes gold literals
    through it so oracle actions stay legal even past the pool cap.
    """
    if mode not in MODES:
        raise ValueError(f"unknown decoding mode {mode!r}")
    tokens = list(tokens)
    question = " ".join(tokens)

    column_pool = list(table.column_ids)
    if mode == MODE_LINKED_COLUMNS:
        linked = [m.target for m in mentions
                  if m.label in ROLE_OF_LABEL and m.target in table.column_ids]
        if linked:
            order = {c: i for i, c in enumerate(table.column_ids)}
            column_pool = sorted(set(linked), key=order.__getitem__)

    literal_pool = _literal_pool(table)
    have = set(literal_pool)
    for lit in extra_literals:
        if lit not in have:
            have.add(lit)
            literal_pool.append(lit)

    if mode in _ROLE_MODES:
        roles, col_scores = build_column_type_features(mentions)
    else:
        roles, col_scores = {}, {}
    lit_scores: dict[str, float] = {}
    if mode != MODE_BASELINE:
        for m in mentions:
            if m.label is EntityLabel.LITERAL_VALUE:
                lit_scores[m.target] = max(lit_scores.get(m.target, 0.0), m.score)

    windows = _question_windows(tokens)
    return EncoderOutput(
        tokens=tokens,
        question=question,
        table_id=table.table_id,
        mode=mode,
        column_pool=column_pool,
        literal_pool=literal_pool,
        column_roles=roles,
        column_link_scores=col_scores,
        literal_link_scores=lit_scores,
        display_fuzzy={
            col: fuzzy_score(table.column_display_names[j], question)
            for j, col in enumerate(table.column_ids)
        },
        literal_in_question={
            lit: normalize_surface(lit) in windows for lit in literal_pool
        },
        literal_fuzzy={lit: fuzzy_score(lit, question) for lit in literal_pool},
        qtokens=sorted({t.lower() for t in tokens}),
    )


def legal_actions(derivation: Derivation, column_pool: Sequence[str],
                  literal_pool: Sequence[str], depth_cap: int) -> list[Action]:
    front = derivation.frontier
    if front is None:
        return []
    sym = front.symbol
    if sym == COPY_COLUMN:
        return [CopyColumn(c) for c in column_pool]
    if sym == COPY_VALUE:
        return [CopyValue(v) for v in literal_pool]
    if sym == COPY_TABLE:
        return [CopyTable(TABLE_TOKEN)]
    out: list[Action] = []
    for rule in derivation.grammar.rules_for(sym):
        if front.subquery_depth >= depth_cap and NT_SUBQUERY in rule.rhs:
            continue
        if not literal_pool and COPY_VALUE in rule.rhs:
            continue
        if not column_pool and COPY_COLUMN in rule.rhs:
            continue
        out.append(ApplyRule(rule))
    return out


def random_decode(grammar: Grammar, column_pool: Sequence[str],
                  literal_pool: Sequence[str], rng: np.random.Generator,
                  depth_cap: int = 3,
                  max_steps: Optional[int] = None) -> Stmt:
    """Uniform sampling over legal actions. Recursion only enters through
    subqueries and those are capped, so unbounded sampling terminates."""
    d = Derivation(grammar)
    steps = 0
    while not d.complete:
        if max_steps is not None and steps >= max_steps:
            raise NoCompleteDerivation(f"no complete derivation in {max_steps} steps")
        legal = legal_actions(d, column_pool, literal_pool, depth_cap)
        if not legal:
            raise NoCompleteDerivation("sampler reached a dead end")
        d.apply(legal[int(rng.integers(len(legal)))])
        steps += 1
    return d.to_tree()


@dataclass
class NspConfig:
    feat_dim: int = 1 << 18
    seed: int = 47
    depth_cap: int = 3
    max_steps: int = 64
    beam_size: int = 4
    role_dropout: float = 0.2
    mode: str = MODE_CTF

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NspConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class DecodeResult:
    tree: Stmt
    actions: tuple[Action, ...]
    log_prob: float


@dataclass
class NspExample:
    enc: EncoderOutput
    actions: list[Action]
    # teacher-forcing caches, owned by whichever model touched them last
    steps: Optional[list] = field(default=None, repr=False, compare=False)
    steps_key: Optional[tuple] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class _StepState:
    clause: str
    parent: str
    prev: str
    depth: int
    subq: int


class _TeacherStep:
    __slots__ = ("symbol", "legal_idx", "gold_pos", "state", "actions", "dyn")

    def __init__(self, symbol: str, legal_idx: np.ndarray, gold_pos: int,
                 state: _StepState, actions: list[Action]):
        self.symbol = symbol
        self.legal_idx = legal_idx
        self.gold_pos = gold_pos
        self.state = state
        self.actions = actions
        self.dyn: dict[bool, tuple] = {}


_EMPTY_IDS = np.zeros(0, dtype=np.int64)
_EMPTY_VALS = np.zeros(0)


class NspModel:
    def __init__(self, config: NspConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        self.params: Params = {"w": rng.normal(0.0, 0.01, size=config.feat_dim)}
        # cache-key prefix: feature ids depend on the hashing setup
        self._ck = (config.feat_dim, config.seed)

    # -- feature bags ---------------------------------------------------

    def _fid(self, *parts: object) -> int:
        return feature_id(self.config.feat_dim, self.config.seed, *parts)

    def _static_bag(self, enc: EncoderOutput, action: Action) -> list[tuple[int, float]]:
        if isinstance(action, ApplyRule):
            sig = action.rule.signature()
            pairs = [(self._fid("r", sig), 1.0)]
            pairs += [(self._fid("r", sig, "q", t), 1.0) for t in enc.qtokens]
            return pairs
        if isinstance(action, CopyColumn):
            col = action.column_id
            pairs = [(self._fid("cc", col), 1.0)]
            pairs += [(self._fid("cc", col, "q", t), 1.0) for t in enc.qtokens]
            pairs.append((self._fid("cc_fuzzy"), enc.display_fuzzy.get(col, 0.0)))
            score = enc.column_link_scores.get(col, 0.0)
            if score > 0.0:
                pairs.append((self._fid("cc_link"), score))
                pairs.append((self._fid("cc_linked"), 1.0))
            return pairs
        if isinstance(action, CopyValue):
            lit = action.value
            pairs = [(self._fid("cv", lit), 1.0)]
            pairs += [(self._fid("cv", lit, "q", t), 1.0) for t in enc.qtokens]
            if enc.literal_in_question.get(lit, False):
                pairs.append((self._fid("cv_window"), 1.0))
            pairs.append((self._fid("cv_fuzzy"), enc.literal_fuzzy.get(lit, 0.0)))
            score = enc.literal_link_scores.get(lit, 0.0)
            if score > 0.0:
                pairs.append((self._fid("cv_link"), score))
                pairs.append((self._fid("cv_linked"), 1.0))
            return pairs
        return [(self._fid("ct", action.name), 1.0)]

    def _dyn_bag(self, enc: EncoderOutput, state: _StepState, action: Action,
                 use_roles: bool) -> list[tuple[int, float]]:
        if isinstance(action, ApplyRule):
            sig = action.rule.signature()
            return [
                (self._fid("r", sig, "prev", state.prev), 1.0),
                (self._fid("r", sig, "parent", state.parent), 1.0),
                (self._fid("r", sig, "depth", min(state.depth, 8)), 1.0),
                (self._fid("r", sig, "clause", state.clause), 1.0),
                (self._fid("r", sig, "subq", state.subq), 1.0),
            ]
        if isinstance(action, CopyColumn):
            col = action.column_id
            pairs = [
                (self._fid("cc", col, "clause", state.clause), 1.0),
                (self._fid("cc", col, "parent", state.parent), 1.0),
            ]
            if use_roles:
                tag = enc.column_roles.get(col)
                if tag is None:
                    pairs.append((self._fid("role_absent", state.clause), 1.0))
                elif tag == state.clause:
                    pairs.append((self._fid("role_match"), 1.0))
                    pairs.append((self._fid("role_match", state.clause), 1.0))
                else:
                    pairs.append((self._fid("role_miss", tag, state.clause), 1.0))
            return pairs
        if isinstance(action, CopyValue):
            lit = action.value
            return [
                (self._fid("cv", lit, "clause", state.clause), 1.0),
                (self._fid("cv", lit, "parent", state.parent), 1.0),
            ]
        return []

    @staticmethod
    def _state_of(derivation: Derivation) -> _StepState:
        front = derivation.frontier
        return _StepState(
            clause=front.clause or "-",
            parent=front.parent_rule.signature() if front.parent_rule else "ROOT",
            prev=action_signature(derivation.actions[-1]) if derivation.actions else "START",
            depth=front.depth,
            subq=front.subquery_depth,
        )

    # -- packed tables ----------------------------------------------------

    def _full_actions(self, grammar: Grammar, enc: EncoderOutput,
                      symbol: str) -> list[Action]:
        key = (*self._ck, "acts", symbol)
        if key not in enc.cache:
            if symbol == COPY_COLUMN:
                acts: list[Action] = [CopyColumn(c) for c in enc.column_pool]
            elif symbol == COPY_VALUE:
                acts = [CopyValue(v) for v in enc.literal_pool]
            elif symbol == COPY_TABLE:
                acts = [CopyTable(TABLE_TOKEN)]
            else:
                acts = [ApplyRule(r) for r in grammar.rules_for(symbol)]
            enc.cache[key] = acts
        return enc.cache[key]

    def _static_table(self, grammar: Grammar, enc: EncoderOutput, symbol: str):
        key = (*self._ck, "stat", symbol)
        if key not in enc.cache:
            ids: list[int] = []
            vals: list[float] = []
            seg: list[int] = []
            full = self._full_actions(grammar, enc, symbol)
            for pos, action in enumerate(full):
                for fid, val in self._static_bag(enc, action):
                    ids.append(fid)
                    vals.append(val)
                    seg.append(pos)
            enc.cache[key] = (
                np.array(ids, dtype=np.int64),
                np.array(vals),
                np.array(seg, dtype=np.int64),
                len(full),
            )
        return enc.cache[key]

    def _dyn_pack(self, enc: EncoderOutput, state: _StepState,
                  actions: Sequence[Action], use_roles: bool):
        ids: list[int] = []
        vals: list[float] = []
        seg: list[int] = []
        for pos, action in enumerate(actions):
            for fid, val in self._dyn_bag(enc, state, action, use_roles):
                ids.append(fid)
                vals.append(val)
                seg.append(pos)
        if not ids:
            return _EMPTY_IDS, _EMPTY_VALS, _EMPTY_IDS
        return (np.array(ids, dtype=np.int64), np.array(vals),
                np.array(seg, dtype=np.int64))

    def _legal_indices(self, enc: EncoderOutput, derivation: Derivation,
                       symbol: str, full: Sequence[Action]) -> np.ndarray:
        if symbol in (COPY_COLUMN, COPY_VALUE, COPY_TABLE):
            return np.arange(len(full), dtype=np.int64)
        front = derivation.frontier
        keep = []
        for i, act in enumerate(full):
            rhs = act.rule.rhs
            if front.subquery_depth >= self.config.depth_cap and NT_SUBQUERY in rhs:
                continue
            if not enc.literal_pool and COPY_VALUE in rhs:
                continue
            if not enc.column_pool and COPY_COLUMN in rhs:
                continue
            keep.append(i)
        return np.array(keep, dtype=np.int64)

    # -- scoring ----------------------------------------------------------

    def _masked_scores(self, grammar: Grammar, enc: EncoderOutput,
                       symbol: str, legal_idx: np.ndarray,
                       dyn: tuple, n_actions: int) -> np.ndarray:
        w = self.params["w"]
        sids, svals, sseg, n_full = self._static_table(grammar, enc, symbol)
        if len(sids):
            stat_full = np.bincount(sseg, weights=w[sids] * svals,
                                    minlength=n_full)
        else:
            stat_full = np.zeros(n_full)
        scores = stat_full[legal_idx].copy()
        dids, dvals, dseg = dyn
        if len(dids):
            scores += np.bincount(dseg, weights=w[dids] * dvals,
                                  minlength=n_actions)
        return scores

    def step_distribution(self, grammar: Grammar, enc: EncoderOutput,
                          derivation: Derivation, use_roles: bool = True
                          ) -> tuple[list[Action], np.ndarray]:
        """Legal actions at this state with their log-probabilities."""
        front = derivation.frontier
        if front is None:
            return [], np.zeros(0)
        symbol = front.symbol
        full = self._full_actions(grammar, enc, symbol)
        legal_idx = self._legal_indices(enc, derivation, symbol, full)
        if len(legal_idx) == 0:
            return [], np.zeros(0)
        actions = [full[i] for i in legal_idx]
        dyn = self._dyn_pack(enc, self._state_of(derivation), actions, use_roles)
        scores = self._masked_scores(grammar, enc, symbol, legal_idx, dyn,
                                     len(actions))
        scores -= scores.max()
        logz = float(np.log(np.exp(scores).sum()))
        return actions, scores - logz

    def legal_actions(self, derivation: Derivation,
                      enc: EncoderOutput) -> list[Action]:
        return legal_actions(derivation, enc.column_pool, enc.literal_pool,
                             self.config.depth_cap)

    # -- decoding -----------------------------------------------------------

    def decode(self, enc: EncoderOutput, grammar: Grammar,
               beam_size: Optional[int] = None,
               max_steps: Optional[int] = None) -> DecodeResult:
        """Beam search by summed log-probability. The greedy completion is
        pooled into every run, so widening the beam never scores below
        greedy. Ties break on the serialized action sequence."""
        beam_size = beam_size or self.config.beam_size
        max_steps = max_steps or self.config.max_steps

        def sort_key(d: Derivation):
            return (-d.log_prob, tuple(action_signature(a) for a in d.actions))

        def run(width: int) -> list[Derivation]:
            beams = [Derivation(grammar)]
            finished: list[Derivation] = []
            for _ in range(max_steps):
                if not beams:
                    break
                nxt: list[Derivation] = []
                for d in beams:
                    actions, logp = self.step_distribution(grammar, enc, d)
                    for a, lp in zip(actions, logp):
                        child = d.child(a, float(lp))
                        (finished if child.complete else nxt).append(child)
                nxt.sort(key=sort_key)
                beams = nxt[:width]
            return finished

        finished = run(beam_size)
        if beam_size > 1:
            finished.extend(run(1))
        if not finished:
            raise NoCompleteDerivation(
                f"beam search found no complete derivation in {max_steps} steps"
            )
        best = min(finished, key=sort_key)
        return DecodeResult(best.to_tree(), tuple(best.actions), best.log_prob)

    # -- training -----------------------------------------------------------

    def _teacher_steps(self, ex: NspExample, grammar: Grammar) -> list[_TeacherStep]:
        key = (id(grammar), self.config.depth_cap, *self._ck)
        if ex.steps_key == key:
            return ex.steps
        d = Derivation(grammar)
        steps: list[_TeacherStep] = []
        for gold in ex.actions:
            front = d.frontier
            if front is None:
                raise IllegalAction("gold action sequence overruns the derivation")
            symbol = front.symbol
            full = self._full_actions(grammar, ex.enc, symbol)
            legal_idx = self._legal_indices(ex.enc, d, symbol, full)
            actions = [full[i] for i in legal_idx]
            if gold not in actions:
                # teacher forcing keeps the gold action reachable even when
                # a mask or pool cap would hide it
                try:
                    fi = full.index(gold)
                except ValueError:
                    raise IllegalAction(
                        f"gold action {action_signature(gold)} not in the "
                        f"action space for {symbol}"
                    ) from None
                legal_idx = np.append(legal_idx, fi)
                actions.append(gold)
            steps.append(_TeacherStep(symbol, legal_idx, actions.index(gold),
                                      self._state_of(d), actions))
            d.apply(gold)
        ex.steps, ex.steps_key = steps, key
        return steps

    def _step_dyn(self, step: _TeacherStep, enc: EncoderOutput,
                  use_roles: bool) -> tuple:
        if use_roles not in step.dyn:
            step.dyn[use_roles] = self._dyn_pack(enc, step.state, step.actions,
                                                 use_roles)
        return step.dyn[use_roles]

    def loss_and_grads(self, examples: Sequence[NspExample], grammar: Grammar,
                       use_roles_flags: Optional[Sequence[bool]] = None
                       ) -> tuple[float, Params]:
        """Teacher-forced mean (over examples) of mean-per-action NLL."""
        if use_roles_flags is None:
            use_roles_flags = [True] * len(examples)
        w = self.params["w"]
        gw = np.zeros_like(w)
        total = 0.0
        n_ex = len(examples)
        for ex, use_roles in zip(examples, use_roles_flags):
            steps = self._teacher_steps(ex, grammar)
            weight = 1.0 / (len(steps) * n_ex)
            for st in steps:
                dyn = self._step_dyn(st, ex.enc, use_roles)
                scores = self._masked_scores(grammar, ex.enc, st.symbol,
                                             st.legal_idx, dyn, len(st.actions))
                scores -= scores.max()
                expl = np.exp(scores)
                logz = float(np.log(expl.sum()))
                total += -(float(scores[st.gold_pos]) - logz) * weight
                dsc = expl / expl.sum()
                dsc[st.gold_pos] -= 1.0
                dsc *= weight
                sids, svals, sseg, n_full = self._static_table(
                    grammar, ex.enc, st.symbol)
                if len(sids):
                    full_coeff = np.zeros(n_full)
                    full_coeff[st.legal_idx] = dsc
                    np.add.at(gw, sids, full_coeff[sseg] * svals)
                dids, dvals, dseg = dyn
                if len(dids):
                    np.add.at(gw, dids, dsc[dseg] * dvals)
        return total, {"w": gw}

    # -- persistence ----------------------------------------------------------

    def save(self, path: str) -> None:
        np.savez_compressed(path, config=self.config.to_json(), **self.params)

    @classmethod
    def load(cls, path: str) -> "NspModel":
        data = np.load(path, allow_pickle=False)
        model = cls(NspConfig.from_json(str(data["config"])))
        model.params["w"] = data["w"]
        return model


def train_nsp(examples: Sequence[NspExample], grammar: Grammar,
              config: NspConfig, epochs: int = 40, lr: float = 0.3
              ) -> tuple[NspModel, list[float]]:
    model = NspModel(config)
    opt = Adam(model.params, lr=lr)
    rng = np.random.default_rng(config.seed + 1)
    roles_exist = config.mode in _ROLE_MODES
    curve = []
    for _ in range(epochs):
        flags = [roles_exist and bool(rng.random() >= config.role_dropout)
                 for _ in examples]
        loss, grads = model.loss_and_grads(examples, grammar, flags)
        curve.append(loss)
        opt.step(grads)
    return model, curve
