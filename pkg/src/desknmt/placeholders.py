"""Named-entity placeholders: recognition, cross-validation over aligned
pairs, substitution for training and restoration after decoding."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum

import numpy as np

__all__ = ["EntityType", "PLACEHOLDER_TOKENS", "EntitySpan", "Lexicon", "recognize",
           "cross_validate", "substitute", "restore", "SubstitutionRecord", "RestoreResult",
           "DigitRegroupRule", "OverlapError", "build_training_mix", "is_placeholder"]


class EntityType(str, Enum):
    NUMERIC = "__ent_numeric"
    MEASUREMENT = "__ent_numex_measurement"
    MONEY = "__ent_numex_money"
    PERSON = "__ent_person"
    PERSON_TITLE = "__ent_person_title"
    PERSON_FIRSTNAME = "__ent_person_firstname"
    PERSON_INITIALS = "__ent_person_initials"
    PERSON_LASTNAME = "__ent_person_lastname"
    PERSON_MIDDLENAME = "__ent_person_middlename"
    LOCATION = "__ent_location"
    ORGANIZATION = "__ent_organization"
    PRODUCT = "__ent_product"
    SUFFIX = "__ent_suffix"
    TIMEX = "__ent_timex_expression"
    DATE = "__ent_date"
    DATE_DAY = "__ent_date_day"
    DATE_MONTH = "__ent_date_month"
    DATE_YEAR = "__ent_date_year"
    HOUR = "__ent_hour"
    URL = "__ent_url"


PLACEHOLDER_TOKENS = tuple(t.value for t in EntityType)
_BY_TOKEN = {t.value: t for t in EntityType}


def is_placeholder(token: str) -> bool:
    return token in _BY_TOKEN


class OverlapError(ValueError):
    pass


@dataclass(frozen=True)
class EntitySpan:
    type: EntityType
    start: int
    end: int                     # exclusive
    value: str
    translation: str | None = None

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("entity span must be non-empty")


# -- recognition --------------------------------------------------------------

_NUM = r"[+-]?\d+(?:[.,]\d+)*"
_NUM_RE = re.compile(rf"^{_NUM}$")
_URL_RE = re.compile(r"^(?:https?://|www\.)\S+$", re.IGNORECASE)
_HOUR_RE = re.compile(r"^(?:[01]?\d|2[0-3]):[0-5]\d(?::[0-5]\d)?$")
_DATE_RE = re.compile(r"^(?:\d{4}-\d{1,2}-\d{1,2}|\d{1,2}/\d{1,2}/\d{2,4}|\d{1,2}\.\d{1,2}\.\d{4})$")
_YEAR_RE = re.compile(r"^(?:1[5-9]|20)\d\d$")
_CURRENCY_SYMBOLS = {"$", "€", "£", "¥", "₩"}
_CURRENCY_WORDS = {"dollar", "dollars", "euro", "euros", "won", "yen", "pounds", "usd", "eur", "krw"}
_UNITS = {"km", "m", "cm", "mm", "kg", "g", "mg", "l", "ml", "mi", "ft", "lb", "lbs", "kb", "mb",
          "gb", "tb", "%", "percent", "meters", "kilometers", "kilograms", "miles", "hours", "°c"}
_MONTHS = {m.lower() for m in ("January February March April May June July August September "
                                "October November December Jan Feb Mar Apr Jun Jul Aug Sep Sept "
                                "Oct Nov Dec").split()}
_DAYS = {d.lower() for d in "Monday Tuesday Wednesday Thursday Friday Saturday Sunday".split()}
_AMPM = {"am", "pm", "a.m.", "p.m."}


class Lexicon:
    """Surface-string lookup loaded from ``surface<TAB>type[<TAB>translation]`` lines.

    Surfaces may span several tokens (space separated); the longest match wins.
    """

    def __init__(self, entries=()):
        self.entries: dict[tuple, tuple[EntityType, str | None]] = {}
        for surface, etype, *rest in entries:
            etype = _BY_TOKEN[etype] if isinstance(etype, str) else etype
            self.entries[tuple(surface.split())] = (etype, rest[0] if rest else None)
        self.max_len = max((len(k) for k in self.entries), default=0)

    @classmethod
    def load(cls, path) -> "Lexicon":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) not in (2, 3) or parts[1] not in _BY_TOKEN:
                    raise ValueError(f"{path}:{lineno}: expected surface<TAB>type[<TAB>translation]")
                entries.append(tuple(parts))
        return cls(entries)

    def match(self, tokens, i):
        for n in range(min(self.max_len, len(tokens) - i), 0, -1):
            hit = self.entries.get(tuple(tokens[i:i + n]))
            if hit:
                return n, hit
        return None


def _is_number(tok: str) -> bool:
    return bool(_NUM_RE.match(tok))


def recognize(tokens, lexicon: Lexicon | None = None) -> list[EntitySpan]:
    """Left-to-right, longest-first entity spans over a token list."""
    tokens = [getattr(t, "surface", t) for t in tokens]
    spans = []
    i, n = 0, len(tokens)
    while i < n:
        tok, low = tokens[i], tokens[i].lower()
        nxt = tokens[i + 1].lower() if i + 1 < n else ""
        if lexicon is not None:
            hit = lexicon.match(tokens, i)
            if hit:
                length, (etype, translation) = hit
                spans.append(EntitySpan(etype, i, i + length, " ".join(tokens[i:i + length]), translation))
                i += length
                continue
        span = None
        if _URL_RE.match(tok):
            span = (EntityType.URL, 1)
        elif _HOUR_RE.match(tok) or (tok.isdigit() and int(tok) <= 12 and nxt in _AMPM):
            span = (EntityType.HOUR, 2 if nxt in _AMPM else 1)
        elif _DATE_RE.match(tok):
            span = (EntityType.DATE, 1)
        elif tok in _CURRENCY_SYMBOLS and i + 1 < n and _is_number(tokens[i + 1]):
            span = (EntityType.MONEY, 2)
        elif _is_number(tok):
            if nxt in _CURRENCY_WORDS:
                span = (EntityType.MONEY, 2)
            elif nxt in _UNITS:
                span = (EntityType.MEASUREMENT, 2)
            elif _YEAR_RE.match(tok):
                span = (EntityType.DATE_YEAR, 1)
            else:
                span = (EntityType.NUMERIC, 1)
        elif low in _MONTHS:
            span = (EntityType.DATE_MONTH, 1)
        elif low in _DAYS:
            span = (EntityType.DATE_DAY, 1)
        if span:
            etype, length = span
            spans.append(EntitySpan(etype, i, i + length, " ".join(tokens[i:i + length])))
            i += length
        else:
            i += 1
    return spans


def cross_validate(src_spans, tgt_spans, alignment) -> list[tuple[EntitySpan, EntitySpan]]:
    """Keep (source, target) span pairs of equal type joined by an alignment link.

    ``alignment`` is an :class:`AlignmentMatrix` or an iterable of ``(s, t)``
    links.  Each span is used at most once, in source order.
    """
    links = getattr(alignment, "links", alignment)
    links = set(map(tuple, links))
    used, pairs = set(), []
    for s in src_spans:
        for j, t in enumerate(tgt_spans):
            if j in used or s.type != t.type:
                continue
            if any((a, b) in links for a in range(s.start, s.end) for b in range(t.start, t.end)):
                pairs.append((s, t))
                used.add(j)
                break
    return pairs


# -- substitution ---------------------------------------------------------------


@dataclass
class SubstitutionRecord:
    """Placeholder occurrence index -> (type, source value, translation, source position)."""

    entries: list
    source: list | None = None     # the substituted source sentence, when known

    def to_line(self) -> str:
        fields = []
        for k, (etype, value, translation, _pos) in enumerate(self.entries):
            f = f"{k}:{etype.value}:{_escape(value)}"
            if translation is not None:
                f += f":{_escape(translation)}"
            fields.append(f)
        return "\t".join(fields)

    @classmethod
    def from_line(cls, line: str) -> "SubstitutionRecord":
        entries = []
        for f in filter(None, line.rstrip("\n").split("\t")):
            parts = f.split(":")
            if len(parts) not in (3, 4) or int(parts[0]) != len(entries):
                raise ValueError(f"malformed substitution field {f!r}")
            translation = _unescape(parts[3]) if len(parts) == 4 else None
            entries.append((_BY_TOKEN[parts[1]], _unescape(parts[2]), translation, None))
        return cls(entries)


def _escape(s: str) -> str:
    return s.replace("%", "%25").replace(":", "%3A").replace("\t", "%09")


def _unescape(s: str) -> str:
    return s.replace("%09", "\t").replace("%3A", ":").replace("%25", "%")


def substitute(tokens, spans) -> tuple[list[str], SubstitutionRecord]:
    tokens = list(tokens)
    spans = sorted(spans, key=lambda s: s.start)
    for a, b in zip(spans, spans[1:]):
        if b.start < a.end:
            raise OverlapError(f"overlapping entity spans at tokens {a.start}-{a.end} and {b.start}-{b.end}")
    if spans and (spans[0].start < 0 or spans[-1].end > len(tokens)):
        raise IndexError("entity span outside the sentence")
    out, entries, pos = [], [], 0
    for s in spans:
        out.extend(tokens[pos:s.start])
        entries.append((s.type, s.value, s.translation, len(out)))
        out.append(s.type.value)
        pos = s.end
    out.extend(tokens[pos:])
    return out, SubstitutionRecord(entries, list(out))


# -- structural rules -------------------------------------------------------------


class DigitRegroupRule:
    """Rewrite numbers whose magnitude word is regrouped in the target language.

    English counts large numbers in powers of 10^3 while Korean groups by
    10^4, so "1.4 billion" is "14억" (억 = 10^8).  When a restored numeric
    value is followed by a target unit token and the source value was followed
    by a scale word, the value is rescaled and glued to the unit.  With
    ``regroup=False`` the value is glued unchanged (the naive output).
    """

    SCALES = {"thousand": 3, "million": 6, "billion": 9, "trillion": 12}
    UNITS = {"만": 4, "억": 8, "조": 12}

    def __init__(self, regroup: bool = True, scales=None, units=None):
        self.regroup = regroup
        self.scales = dict(scales or self.SCALES)
        self.units = dict(units or self.UNITS)

    def rescale(self, value: str, scale_word: str | None, unit: str) -> str:
        if not self.regroup or scale_word not in self.scales:
            return value
        try:
            d = Decimal(value.replace(",", ""))
        except InvalidOperation:
            return value
        d = d.scaleb(self.scales[scale_word] - self.units[unit])
        text = format(d.normalize(), "f")
        return text

    def __call__(self, tokens, restored, source_tokens):
        """``restored`` maps output position -> record entry index used there."""
        out, skip = [], False
        for i, tok in enumerate(tokens):
            if skip:
                skip = False
                continue
            entry = restored.get(i)
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if entry is not None and entry[0] == EntityType.NUMERIC and nxt in self.units:
                src_pos = entry[3]
                scale = source_tokens[src_pos + 1].lower() if (
                    src_pos is not None and src_pos + 1 < len(source_tokens)) else None
                out.append(self.rescale(tok, scale, nxt) + nxt)
                skip = True
            else:
                out.append(tok)
        return out


# -- restoration ------------------------------------------------------------------


@dataclass
class RestoreResult:
    tokens: list
    flagged: list          # output positions that had no same-type source occurrence

    def __iter__(self):
        return iter(self.tokens)


def restore(target_tokens, record: SubstitutionRecord, attention=None, rules=(),
            source_tokens=None, unk: str = "<unk>") -> RestoreResult:
    """Put entity values back in place of target placeholders.

    Each placeholder takes the unused same-type source occurrence with the most
    attention at its step (``attention[t]`` over the substituted source);
    without attention the occurrences are used in order.  A provided
    translation wins over the raw value.  Rules run last.
    """
    target_tokens = list(target_tokens)
    used: set[int] = set()
    out, restored, flagged = [], {}, []
    for t, tok in enumerate(target_tokens):
        etype = _BY_TOKEN.get(tok)
        if etype is None:
            out.append(tok)
            continue
        cands = [k for k, e in enumerate(record.entries) if e[0] == etype and k not in used]
        if not cands:
            out.append(unk)
            flagged.append(t)
            continue
        k = cands[0]
        if attention is not None and t < len(attention) and all(record.entries[c][3] is not None for c in cands):
            a = np.asarray(attention[t])
            k = max(cands, key=lambda c: (a[record.entries[c][3]] if record.entries[c][3] < len(a) else -1, -c))
        used.add(k)
        _etype, value, translation, _pos = record.entries[k]
        restored[len(out)] = record.entries[k]
        # multi-token values were joined with spaces at recognition time
        out.extend((translation if translation is not None else value).split(" "))
    if source_tokens is None:
        source_tokens = record.source or []
    for rule in rules:
        out = rule(out, restored, source_tokens)
    return RestoreResult(out, flagged)


# -- corpus building ----------------------------------------------------------------


def build_training_mix(pairs, alignments, lexicon=None, ratio: float = 0.2, seed: int = 0):
    """Training pairs with placeholders substituted on a ``ratio`` share of the
    eligible pairs; both the substituted and the raw version are kept for those.

    Returns ``(pairs, records)`` where records hold the source-side
    substitution record of every output pair (None for raw pairs).
    """
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must be in [0, 1]")
    rng = random.Random(seed)
    out, records = [], []
    for (src, tgt), links in zip(pairs, alignments):
        out.append((list(src), list(tgt)))
        records.append(None)
        valid = cross_validate(recognize(src, lexicon), recognize(tgt, lexicon), links)
        if valid and rng.random() < ratio:
            s_sub, rec = substitute(src, [p[0] for p in valid])
            t_sub, _ = substitute(tgt, [p[1] for p in valid])
            out.append((s_sub, t_sub))
            records.append(rec)
    return out, records
