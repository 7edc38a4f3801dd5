"""String normalization, similarity scoring, and stable feature hashing.

Everything here is deterministic and dependency-free so that model behaviour
is reproducible across runs and platforms.
"""
from __future__ import annotations

import re
import string
import zlib
from decimal import Decimal, InvalidOperation

_WS_RE = re.compile(r"\s+")
# plain decimal notation only; exponents are not literal forms in this subset
_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")
_STRIP_CHARS = string.punctuation + string.whitespace


def normalize_surface(s: str) -> str:
    """Lowercase, collapse internal whitespace, strip outer punctuation."""
    s = _WS_RE.sub(" ", s.lower()).strip()
    return s.strip(_STRIP_CHARS)


def is_number_string(s: str) -> bool:
    return bool(_NUMBER_RE.match(s))


def parse_number(s: str) -> float:
    if not is_number_string(s):
        raise ValueError(f"not a finite decimal: {s!r}")
    return float(s)


def canon_number(x) -> str:
    """Canonical trailing-zero-free decimal form, never exponent notation."""
    d = x if isinstance(x, Decimal) else Decimal(str(x))
    if d == d.to_integral_value():
        d = d.quantize(Decimal(1))
    s = format(d.normalize(), "f")
    return "0" if s == "-0" else s


def canon_cell(v) -> str:
    """Canonical string for one denotation cell; None renders as ''."""
    if v is None:
        return ""
    if isinstance(v, (int, float, Decimal)):
        return canon_number(v)
    s = str(v)
    if is_number_string(s):
        try:
            return canon_number(Decimal(s))
        except InvalidOperation:
            return s
    return s


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def fuzzy_score(a: str, b: str) -> float:
    """1 - normalized edit distance over normalized surfaces, in [0, 1]."""
    na, nb = normalize_surface(a), normalize_surface(b)
    if not na and not nb:
        return 1.0
    if not na or not nb:
        return 0.0
    return 1.0 - levenshtein(na, nb) / max(len(na), len(nb))


def token_jaccard(a: str, b: str) -> float:
    sa = set(normalize_surface(a).split())
    sb = set(normalize_surface(b).split())
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def _common_prefix_len(a: str, b: str) -> int:
    n = 0
    for ca, cb in zip(a, b):
        if ca != cb:
            break
        n += 1
    return n


def prefix_overlap(a: str, b: str) -> float:
    na, nb = normalize_surface(a), normalize_surface(b)
    if not na or not nb:
        return 0.0
    return _common_prefix_len(na, nb) / max(len(na), len(nb))


def suffix_overlap(a: str, b: str) -> float:
    na, nb = normalize_surface(a)[::-1], normalize_surface(b)[::-1]
    if not na or not nb:
        return 0.0
    return _common_prefix_len(na, nb) / max(len(na), len(nb))


def _is_subsequence(needle: str, haystack: str) -> bool:
    it = iter(haystack)
    return all(c in it for c in needle)


def acronym_score(mention: str, candidate: str) -> float:
    """1.0 when the mention is the candidate's initials, 0.7 when it is a
    leading letter-subsequence of the candidate, else 0."""
    m = normalize_surface(mention).replace(" ", "")
    toks = normalize_surface(candidate).split()
    if not m or not toks or len(toks) < 2:
        return 0.0
    initials = "".join(t[0] for t in toks)
    if m == initials:
        return 1.0
    letters = "".join(toks)
    if len(m) >= 2 and m[0] == letters[0] and len(m) < len(letters) and _is_subsequence(m, letters):
        return 0.7
    return 0.0


def length_ratio(a: str, b: str) -> float:
    na, nb = len(normalize_surface(a)), len(normalize_surface(b))
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return min(na, nb) / max(na, nb)


def char_ngrams(s: str, n: int = 3) -> list[str]:
    padded = f"#{s}#"
    if len(padded) < n:
        return [padded]
    return [padded[i : i + n] for i in range(len(padded) - n + 1)]


def stable_hash(key: str, dim: int, seed: object = "") -> int:
    """Deterministic hash bucket in [0, dim), stable across processes."""
    return zlib.crc32((str(seed) + "\x1f" + key).encode("utf-8")) % dim


def feature_id(dim: int, seed: object, *parts) -> int:
    return stable_hash("\x1f".join(str(p) for p in parts), dim, seed)
