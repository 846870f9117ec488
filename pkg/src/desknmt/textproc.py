"""Generic tokenization, detokenization and the case feature.

The tokenizer splits on whitespace, then separates punctuation from word
characters.  URLs and standalone numbers are kept whole and tagged as
protected entities.  Each token remembers how it was attached to its
neighbours so :func:`detokenize` reproduces the input exactly.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace

__all__ = [
    "CaseValue", "Token", "tokenize", "detokenize", "case_of", "case_split",
    "case_restore", "JOINER", "tokens_to_line", "line_to_tokens",
    "CASE_LABELS", "URL_PLACEHOLDER", "NUMERIC_PLACEHOLDER",
]

URL_PLACEHOLDER = "__ent_url"
NUMERIC_PLACEHOLDER = "__ent_numeric"
JOINER = "￭"  # marks a token glued to its left neighbour in tokenized files


class CaseValue(enum.Enum):
    LOWER = "L"
    CAPITALIZED = "C"
    UPPER = "U"
    MIXED = "M"
    NONE = "N"


CASE_LABELS = [c.value for c in CaseValue]


@dataclass(frozen=True)
class Token:
    surface: str
    case: CaseValue = CaseValue.NONE
    joiner_left: bool = False
    joiner_right: bool = False
    protected: str | None = None
    # exact whitespace run before/after; None means "one space" / "nothing"
    space_before: str | None = None
    space_after: str | None = None

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")


_URL = r"(?:(?:https?|ftp)://|www\.)[^\s]+?(?=[.,;:!?)\]}'\"]*(?:\s|$))"
_NUMBER = r"(?<![^\W\d_])(?:(?<=^)[+-])?\d+(?:[.,]\d+)*(?![^\W\d_])"
_PIECE = re.compile(rf"(?P<url>{_URL})|(?P<num>{_NUMBER})|(?P<word>\w+)|(?P<other>.)", re.S)
_SPACE_SPLIT = re.compile(r"(\s+)")


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into tokens.  Whitespace-only input yields ``[]``."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")  # raises UnicodeDecodeError on invalid input
    parts = _SPACE_SPLIT.split(text)
    tokens: list[dict] = []
    pending_space = parts[0] if parts and not parts[0].strip() else ""
    for part in parts:
        if not part:
            continue
        if not part.strip():
            pending_space = part
            continue
        first = True
        for m in _PIECE.finditer(part):
            surface = m.group(0)
            protected = None
            if m.lastgroup == "url":
                protected = URL_PLACEHOLDER
            elif m.lastgroup == "num":
                protected = NUMERIC_PLACEHOLDER
            tokens.append({
                "surface": surface,
                "protected": protected,
                "joiner_left": bool(tokens) and not first,
                "space_before": pending_space if first else "",
            })
            first = False
            pending_space = ""
    if not tokens:
        return []
    trailing = pending_space
    out = []
    for i, t in enumerate(tokens):
        joiner_right = i + 1 < len(tokens) and tokens[i + 1]["joiner_left"]
        sb = t["space_before"]
        out.append(Token(
            surface=t["surface"],
            case=case_of(t["surface"]),
            joiner_left=t["joiner_left"],
            joiner_right=joiner_right,
            protected=t["protected"],
            space_before=None if (sb == " " and i > 0) else sb,
            space_after=trailing if (i == len(tokens) - 1 and trailing) else None,
        ))
    return out


def detokenize(tokens: list[Token]) -> str:
    """Inverse of :func:`tokenize`; tokens without spacing info get single spaces."""
    pieces = []
    for i, tok in enumerate(tokens):
        if i == 0:
            pieces.append(tok.space_before or "")
        elif tok.joiner_left or tokens[i - 1].joiner_right:
            pass
        else:
            pieces.append(" " if tok.space_before is None else tok.space_before)
        pieces.append(tok.surface)
    if tokens and tokens[-1].space_after:
        pieces.append(tokens[-1].space_after)
    return "".join(pieces)


def _is_cased(ch: str) -> bool:
    return ch.lower() != ch.upper()


def _capitalize_first_cased(s: str) -> str:
    for i, ch in enumerate(s):
        if _is_cased(ch):
            return s[:i] + ch.upper() + s[i + 1:]
    return s


def _restore(lowered: str, case: CaseValue) -> str:
    if case is CaseValue.UPPER:
        return lowered.upper()
    if case is CaseValue.CAPITALIZED:
        return _capitalize_first_cased(lowered)
    return lowered


def case_of(surface: str) -> CaseValue:
    cased = [ch for ch in surface if _is_cased(ch)]
    if not cased:
        return CaseValue.NONE
    low = surface.lower()
    if low == surface:
        return CaseValue.LOWER
    if len(cased) >= 2 and surface.upper() == surface and _restore(low, CaseValue.UPPER) == surface:
        return CaseValue.UPPER
    if _restore(low, CaseValue.CAPITALIZED) == surface:
        return CaseValue.CAPITALIZED
    # ß/İ-style length changes and iPhone-style tokens are not restorable
    return CaseValue.MIXED


def case_split(tokens) -> tuple[list, list[CaseValue]]:
    """Lowercase tokens and return the parallel case-feature sequence.

    Accepts strings or :class:`Token` objects; mixed-case tokens keep their
    original surface.
    """
    words, feats = [], []
    for tok in tokens:
        surface = tok.surface if isinstance(tok, Token) else tok
        case = case_of(surface)
        low = surface if case is CaseValue.MIXED else surface.lower()
        words.append(replace(tok, surface=low, case=case) if isinstance(tok, Token) else low)
        feats.append(case)
    return words, feats


def case_restore(tokens, cases) -> list:
    if len(tokens) != len(cases):
        raise ValueError(f"{len(tokens)} tokens but {len(cases)} case values")
    out = []
    for tok, case in zip(tokens, cases):
        case = CaseValue(case)
        if isinstance(tok, Token):
            out.append(replace(tok, surface=_restore(tok.surface, case), case=case))
        else:
            out.append(_restore(tok, case))
    return out


def tokens_to_line(tokens: list[Token]) -> str:
    """Tokenized-file form: surfaces separated by single spaces, with a joiner
    mark on tokens glued to their left neighbour."""
    out = []
    for i, tok in enumerate(tokens):
        glued = i > 0 and (tok.joiner_left or tokens[i - 1].joiner_right)
        out.append(JOINER + tok.surface if glued else tok.surface)
    return " ".join(out)


def line_to_tokens(line: str) -> list[Token]:
    toks = []
    for piece in line.split():
        glued = piece.startswith(JOINER) and len(piece) > len(JOINER)
        surface = piece[len(JOINER):] if glued else piece
        toks.append(Token(surface, case=case_of(surface), joiner_left=glued))
    return [
        replace(t, joiner_right=i + 1 < len(toks) and toks[i + 1].joiner_left)
        for i, t in enumerate(toks)
    ]
