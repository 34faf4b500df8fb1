"""Token vocabulary and tag grammars for the three output regimes.

Traces are sequences of integer token codes.  Free text is abstracted to the
``CONTENT`` token, so the grammars only constrain tag structure and the
answer block.  Three deterministic automata are provided (direct, structured,
unstructured); each has an absorbing sink and a single accepting state that is
entered on ``EOS``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Token(enum.IntEnum):
    THINK_OPEN = 0
    THINK_CLOSE = 1
    PLANNING_OPEN = 2
    PLANNING_CLOSE = 3
    CAPTION_OPEN = 4
    CAPTION_CLOSE = 5
    REASONING_OPEN = 6
    REASONING_CLOSE = 7
    SUMMARY_OPEN = 8
    SUMMARY_CLOSE = 9
    ANSWER_OPEN = 10
    ANSWER_CLOSE = 11
    CONTENT = 12
    OPT_A = 13
    OPT_B = 14
    OPT_C = 15
    OPT_D = 16
    SEP = 17
    EOS = 18


VOCAB_SIZE = len(Token)
OPTIONS = (Token.OPT_A, Token.OPT_B, Token.OPT_C, Token.OPT_D)
OPTION_CODES = np.array([int(t) for t in OPTIONS])
CONTENT_WORD = "w"

_TAG_NAMES = ("THINK", "PLANNING", "CAPTION", "REASONING", "SUMMARY", "ANSWER")

RENDERING: dict[Token, str] = {}
for _i, _name in enumerate(_TAG_NAMES):
    RENDERING[Token(2 * _i)] = f"<{_name}>"
    RENDERING[Token(2 * _i + 1)] = f"</{_name}>"
RENDERING[Token.CONTENT] = CONTENT_WORD
for _tok, _letter in zip(OPTIONS, "ABCD"):
    RENDERING[_tok] = _letter
RENDERING[Token.SEP] = "<SEP>"
RENDERING[Token.EOS] = "<EOS>"

_WORD_TO_TOKEN = {word: tok for tok, word in RENDERING.items()}
_RENDER_TABLE = [RENDERING[Token(i)] for i in range(VOCAB_SIZE)]

SECTIONS = ("PLANNING", "CAPTION", "REASONING", "SUMMARY")


class Regime(enum.Enum):
    DIRECT = "direct"
    STRUCTURED = "structured"
    UNSTRUCTURED = "unstructured"

    @classmethod
    def parse(cls, value: "str | Regime") -> "Regime":
        if isinstance(value, Regime):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ValueError(f"unknown regime {value!r}; expected one of "
                             f"{[r.value for r in cls]}") from None


# ---------------------------------------------------------------------------
# Automata
# ---------------------------------------------------------------------------

def _table(n_states: int, sink: int) -> np.ndarray:
    return np.full((n_states, VOCAB_SIZE), sink, dtype=np.int64)


def _answer_tail(table: np.ndarray, after_think: int, sink: int) -> int:
    """Wire ``ANS_O OPT ANS_C EOS`` starting at ``after_think``; returns ACCEPT."""
    a1, a2, a3, accept = after_think + 1, after_think + 2, after_think + 3, after_think + 4
    table[after_think, Token.ANSWER_OPEN] = a1
    for opt in OPTIONS:
        table[a1, opt] = a2
    table[a2, Token.ANSWER_CLOSE] = a3
    table[a3, Token.EOS] = accept
    return accept


def _build_direct() -> tuple[np.ndarray, int, int]:
    # START=0, A1..A3=1..3, ACCEPT=4, SINK=5
    sink = 5
    table = _table(6, sink)
    table[0, Token.ANSWER_OPEN] = 1
    for opt in OPTIONS:
        table[1, opt] = 2
    table[2, Token.ANSWER_CLOSE] = 3
    table[3, Token.EOS] = 4
    return table, 4, sink


def _build_unstructured() -> tuple[np.ndarray, int, int]:
    # START=0, BODY=1, AFTER_THINK=2, A1..A3=3..5, ACCEPT=6, SINK=7
    sink = 7
    table = _table(8, sink)
    table[0, Token.THINK_OPEN] = 1
    table[1, :] = 1
    table[1, Token.THINK_CLOSE] = 2
    table[1, Token.EOS] = sink
    accept = _answer_tail(table, 2, sink)
    return table, accept, sink


def _build_structured() -> tuple[np.ndarray, int, int]:
    # START=0, THINK=1, then (body, after) per section = 2..9,
    # AFTER_THINK=10, A1..A3=11..13, ACCEPT=14, SINK=15
    sink = 15
    table = _table(16, sink)
    table[0, Token.THINK_OPEN] = 1
    expecting = 1
    for i in range(len(SECTIONS)):
        open_tok, close_tok = Token(2 * (i + 1)), Token(2 * (i + 1) + 1)
        body, after = 2 + 2 * i, 3 + 2 * i
        table[expecting, open_tok] = body
        table[body, Token.CONTENT] = body
        table[body, close_tok] = after
        expecting = after
    table[expecting, Token.THINK_CLOSE] = 10
    accept = _answer_tail(table, 10, sink)
    return table, accept, sink


_AUTOMATA = {
    Regime.DIRECT: _build_direct(),
    Regime.STRUCTURED: _build_structured(),
    Regime.UNSTRUCTURED: _build_unstructured(),
}


@dataclass(frozen=True)
class GrammarState:
    state_id: int
    is_sink: bool = False


def start_state(regime: Regime) -> GrammarState:
    return GrammarState(0, False)


def n_states(regime: Regime) -> int:
    return _AUTOMATA[regime][0].shape[0]


def accept_state(regime: Regime) -> int:
    return _AUTOMATA[regime][1]


def sink_state(regime: Regime) -> int:
    return _AUTOMATA[regime][2]


def transition_table(regime: Regime) -> np.ndarray:
    """Read-only copy of the (state, token) -> state table."""
    return _AUTOMATA[regime][0].copy()


def next_state(state: GrammarState, token: int, regime: Regime) -> GrammarState:
    table, _, sink = _AUTOMATA[regime]
    if state.is_sink or state.state_id == sink:
        return GrammarState(sink, True)
    if not 0 <= state.state_id < table.shape[0]:
        raise ValueError(f"state {state.state_id} does not belong to the {regime.value} automaton")
    nxt = int(table[state.state_id, int(token)])
    return GrammarState(nxt, nxt == sink)


def accepts(tokens: Sequence[int], regime: Regime) -> bool:
    """True iff ``tokens`` (up to and including the first EOS) is in the regime grammar."""
    table, accept, sink = _AUTOMATA[regime]
    state = 0
    for tok in tokens:
        state = table[state, tok]
        if state == sink:
            return False
        if tok == Token.EOS:
            break
    return state == accept


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

@dataclass
class ParseResult:
    structured_valid: bool
    unstructured_valid: bool
    direct_valid: bool
    extracted_answer: int | None
    completion_length: int
    section_spans: dict[str, tuple[int, int]] = field(default_factory=dict)

    def valid_for(self, regime: Regime) -> bool:
        if regime is Regime.STRUCTURED:
            return self.structured_valid
        if regime is Regime.UNSTRUCTURED:
            return self.unstructured_valid
        return self.direct_valid


def _extract_answer(prefix: Sequence[int]) -> int | None:
    opens = [i for i, t in enumerate(prefix) if t == Token.ANSWER_OPEN]
    closes = [i for i, t in enumerate(prefix) if t == Token.ANSWER_CLOSE]
    if len(opens) != 1 or len(closes) != 1 or closes[0] < opens[0]:
        return None
    answer = None
    for tok in prefix[opens[0] + 1:closes[0]]:
        if tok == Token.CONTENT:
            continue
        if Token.OPT_A <= tok <= Token.OPT_D and answer is None:
            answer = tok - Token.OPT_A
            continue
        return None
    return answer


def _spans(prefix: Sequence[int]) -> dict[str, tuple[int, int]]:
    spans: dict[str, tuple[int, int]] = {}
    for i, name in enumerate(_TAG_NAMES):
        open_tok, close_tok = 2 * i, 2 * i + 1
        try:
            start = prefix.index(open_tok)
            end = prefix.index(close_tok, start + 1)
        except ValueError:
            continue
        spans[name] = (start, end + 1)
    return spans


def parse(tokens: Iterable[int]) -> ParseResult:
    """Validate ``tokens`` under all three grammars and extract the answer.

    Tokens after the first EOS are ignored.  Never raises on well-typed input.
    """
    seq = [int(t) for t in tokens]
    try:
        eos = seq.index(Token.EOS)
        prefix, length = seq[:eos + 1], eos
    except ValueError:
        prefix, length = seq, len(seq)
    body = prefix[:length]
    return ParseResult(
        structured_valid=accepts(prefix, Regime.STRUCTURED),
        unstructured_valid=accepts(prefix, Regime.UNSTRUCTURED),
        direct_valid=accepts(prefix, Regime.DIRECT),
        extracted_answer=_extract_answer(body),
        completion_length=length,
        section_spans=_spans(body),
    )


# ---------------------------------------------------------------------------
# Text form
# ---------------------------------------------------------------------------

def render(tokens: Iterable[int]) -> str:
    return " ".join(_RENDER_TABLE[int(t)] for t in tokens)


def tokenize(text: str) -> list[Token]:
    """Inverse of :func:`render`; unrecognised words become ``CONTENT``."""
    return [_WORD_TO_TOKEN.get(word, Token.CONTENT) for word in text.split()]


def skeleton(regime: Regime, answer: int, section_lengths: Sequence[int] = ()) -> list[Token]:
    """Grammar-perfect trace for ``regime`` with the given CONTENT run lengths.

    Structured takes four lengths (one per section), unstructured takes one,
    direct takes none.
    """
    opt = OPTIONS[answer]
    tail = [Token.ANSWER_OPEN, opt, Token.ANSWER_CLOSE, Token.EOS]
    if regime is Regime.DIRECT:
        return tail
    if regime is Regime.UNSTRUCTURED:
        (n,) = section_lengths
        return [Token.THINK_OPEN, *[Token.CONTENT] * n, Token.THINK_CLOSE, *tail]
    if len(section_lengths) != len(SECTIONS):
        raise ValueError("structured skeleton needs one length per section")
    out = [Token.THINK_OPEN]
    for i, n in enumerate(section_lengths):
        out += [Token(2 * (i + 1)), *[Token.CONTENT] * n, Token(2 * (i + 1) + 1)]
    out += [Token.THINK_CLOSE, *tail]
    return out
