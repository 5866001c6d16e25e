"""Task specification language: predicate registry, AST, parser and printer.

Surface syntax::

    spec  := spec 'ensuring' pred | spec 'or' spec | spec ';' spec
           | 'achieve' pred | 'achieve' '(' pred (';' pred)+ ')' | '(' spec ')'
    pred  := pred 'or' pred | pred 'and' pred | NAME ['(' NUM (',' NUM)* ')'] | '(' pred ')'

Binding strength, loosest first: ``ensuring``, ``or``, ``;``, ``achieve``.
All binary operators associate to the left.  ``achieve (b1; b2)`` is sugar
for ``achieve b1; achieve b2``.  ``#`` starts a comment.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

import numpy as np

__all__ = [
    "AtomicPredicateDecl",
    "PredicateRegistry",
    "RegistrationError",
    "SpecSyntaxError",
    "Atom",
    "And",
    "Or",
    "Achieve",
    "Ensuring",
    "Seq",
    "Choice",
    "register_predicate",
    "parse_spec",
    "parse_spec_file",
    "print_spec",
    "print_pred",
    "pred_bool",
    "pred_quant",
    "atoms",
]


# ---------------------------------------------------------------------------
# Predicate registry


class RegistrationError(ValueError):
    pass


@dataclass(frozen=True)
class AtomicPredicateDecl:
    """A named state property with Boolean and robustness evaluations.

    Both callables take ``(state, *params)`` where ``state`` has the state
    vector on its last axis, so they work on a single state or on a batch.
    ``bound``, when given, maps a state box ``(lo, hi)`` and the parameters
    to an upper bound on ``|quantitative_eval|`` over that box.
    """

    name: str
    arity: int
    boolean_eval: Callable[..., np.ndarray]
    quantitative_eval: Callable[..., np.ndarray]
    bound: Optional[Callable[..., float]] = None


class PredicateRegistry:
    def __init__(self, decls=()):
        self._decls: dict[str, AtomicPredicateDecl] = {}
        for decl in decls:
            self.register(decl)

    def register(self, decl: AtomicPredicateDecl) -> "PredicateRegistry":
        if decl.name in self._decls:
            raise RegistrationError(f"predicate {decl.name!r} is already registered")
        if not _IDENT.fullmatch(decl.name) or decl.name in KEYWORDS:
            raise RegistrationError(f"invalid predicate name {decl.name!r}")
        self._decls[decl.name] = decl
        return self

    def __getitem__(self, name: str) -> AtomicPredicateDecl:
        return self._decls[name]

    def __contains__(self, name: object) -> bool:
        return name in self._decls

    def __len__(self) -> int:
        return len(self._decls)

    def __iter__(self) -> Iterator[str]:
        return iter(self._decls)

    def get(self, name: str) -> Optional[AtomicPredicateDecl]:
        return self._decls.get(name)


def register_predicate(registry: PredicateRegistry, decl: AtomicPredicateDecl) -> PredicateRegistry:
    return registry.register(decl)


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Atom:
    name: str
    params: tuple[float, ...] = ()


@dataclass(frozen=True)
class And:
    left: "Pred"
    right: "Pred"


@dataclass(frozen=True)
class Or:
    left: "Pred"
    right: "Pred"


Pred = Union[Atom, And, Or]


@dataclass(frozen=True)
class Achieve:
    pred: Pred


@dataclass(frozen=True)
class Ensuring:
    spec: "Spec"
    pred: Pred


@dataclass(frozen=True)
class Seq:
    first: "Spec"
    second: "Spec"


@dataclass(frozen=True)
class Choice:
    left: "Spec"
    right: "Spec"


Spec = Union[Achieve, Ensuring, Seq, Choice]


def atoms(pred: Pred) -> list[Atom]:
    if isinstance(pred, Atom):
        return [pred]
    return atoms(pred.left) + atoms(pred.right)


def pred_bool(pred: Pred, state, registry: PredicateRegistry):
    if isinstance(pred, Atom):
        return np.asarray(registry[pred.name].boolean_eval(state, *pred.params), dtype=bool)
    left = pred_bool(pred.left, state, registry)
    right = pred_bool(pred.right, state, registry)
    return left & right if isinstance(pred, And) else left | right


def pred_quant(pred: Pred, state, registry: PredicateRegistry):
    if isinstance(pred, Atom):
        return np.asarray(registry[pred.name].quantitative_eval(state, *pred.params), dtype=float)
    left = pred_quant(pred.left, state, registry)
    right = pred_quant(pred.right, state, registry)
    return np.minimum(left, right) if isinstance(pred, And) else np.maximum(left, right)


# ---------------------------------------------------------------------------
# Lexer

KEYWORDS = frozenset({"achieve", "ensuring", "or", "and"})
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_PUNCT = {"(": "LPAREN", ")": "RPAREN", ",": "COMMA", ";": "SEMI"}


class SpecSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int, filename: str = "<spec>"):
        super().__init__(f"{filename}:{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col
        self.filename = filename


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT, NUMBER, KEYWORD, LPAREN, RPAREN, COMMA, SEMI, EOF
    text: str
    line: int
    col: int


def _tokenize(text: str, filename: str) -> list[_Token]:
    tokens = []
    line, col, i = 1, 1, 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line, col, i = line + 1, 1, i + 1
            continue
        if ch.isspace():
            col, i = col + 1, i + 1
            continue
        if ch == "#":
            while i < len(text) and text[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            tokens.append(_Token(_PUNCT[ch], ch, line, col))
            col, i = col + 1, i + 1
            continue
        m = _IDENT.match(text, i)
        if m:
            word = m.group()
            tokens.append(_Token("KEYWORD" if word in KEYWORDS else "IDENT", word, line, col))
        else:
            m = _NUMBER.match(text, i)
            if not m:
                raise SpecSyntaxError(f"unexpected character {ch!r}", line, col, filename)
            tokens.append(_Token("NUMBER", m.group(), line, col))
        col += m.end() - i
        i = m.end()
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str, registry: PredicateRegistry, filename: str):
        self.tokens = _tokenize(text, filename)
        self.pos = 0
        self.registry = registry
        self.filename = filename
        self.open_parens: list[_Token] = []

    def peek(self, offset: int = 0) -> _Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def error(self, message: str, tok: Optional[_Token] = None) -> SpecSyntaxError:
        tok = tok or self.peek()
        return SpecSyntaxError(message, tok.line, tok.col, self.filename)

    def describe(self, tok: _Token) -> str:
        return "end of input" if tok.kind == "EOF" else repr(tok.text)

    def open(self) -> None:
        self.open_parens.append(self.next())

    def close(self) -> None:
        if not self.at("RPAREN"):
            opener = self.open_parens[-1]
            if self.at("EOF"):
                raise self.error(f"unbalanced parentheses: '(' opened at {opener.line}:{opener.col} is never closed", opener)
            raise self.error(f"expected ')' but found {self.describe(self.peek())}")
        self.open_parens.pop()
        self.next()

    # spec level -----------------------------------------------------------

    def parse(self) -> Spec:
        spec = self.spec()
        if not self.at("EOF"):
            tok = self.peek()
            if tok.kind == "RPAREN":
                raise self.error("unbalanced parentheses: unexpected ')'")
            raise self.error(f"unexpected {self.describe(tok)}")
        return spec

    def spec(self) -> Spec:
        node = self.choice()
        while self.at("KEYWORD", "ensuring"):
            self.next()
            node = Ensuring(node, self.pred())
        return node

    def choice(self) -> Spec:
        node = self.seq()
        while self.at("KEYWORD", "or"):
            self.next()
            node = Choice(node, self.seq())
        return node

    def seq(self) -> Spec:
        node = self.primary()
        while self.at("SEMI"):
            self.next()
            node = Seq(node, self.primary())
        return node

    def primary(self) -> Spec:
        tok = self.peek()
        if tok.kind == "KEYWORD" and tok.text == "achieve":
            self.next()
            return self.achieve_body()
        if tok.kind == "LPAREN":
            self.open()
            node = self.spec()
            self.close()
            return node
        raise self.error(f"expected 'achieve' or '(' but found {self.describe(tok)}")

    def achieve_body(self) -> Spec:
        if not self.at("LPAREN"):
            return Achieve(self.pred())
        # '(' after achieve: parenthesised predicate, or the ';' sugar
        self.open()
        first = self.pred()
        if not self.at("SEMI"):
            self.close()
            return Achieve(self.pred_rest(first))
        node: Spec = Achieve(first)
        while self.at("SEMI"):
            self.next()
            node = Seq(node, Achieve(self.pred()))
        self.close()
        return node

    # predicate level ------------------------------------------------------

    def pred(self) -> Pred:
        return self.pred_rest(self.pred_and())

    def pred_rest(self, left: Pred) -> Pred:
        # handles trailing 'and'/'or' after an already-parsed operand
        while self.at("KEYWORD", "and"):
            self.next()
            left = And(left, self.pred_atom())
        while self.at("KEYWORD", "or") and self._or_continues_predicate():
            self.next()
            left = Or(left, self.pred_and())
        return left

    def pred_and(self) -> Pred:
        node = self.pred_atom()
        while self.at("KEYWORD", "and"):
            self.next()
            node = And(node, self.pred_atom())
        return node

    def _or_continues_predicate(self) -> bool:
        # `or` followed by '('* NAME is predicate disjunction; followed by
        # '('* 'achieve' it is a choice between specifications.
        k = 1
        while self.peek(k).kind == "LPAREN":
            k += 1
        return self.peek(k).kind == "IDENT"

    def pred_atom(self) -> Pred:
        tok = self.peek()
        if tok.kind == "LPAREN":
            self.open()
            node = self.pred()
            self.close()
            return node
        if tok.kind != "IDENT":
            raise self.error(f"expected a predicate but found {self.describe(tok)}")
        self.next()
        decl = self.registry.get(tok.text)
        if decl is None:
            raise self.error(f"unknown predicate {tok.text!r}", tok)
        params: list[float] = []
        if self.at("LPAREN"):
            self.open()
            if not self.at("RPAREN"):
                params.append(self.number())
                while self.at("COMMA"):
                    self.next()
                    params.append(self.number())
            self.close()
        if len(params) != decl.arity:
            raise self.error(
                f"arity mismatch: {tok.text!r} takes {decl.arity} parameter(s), got {len(params)}", tok
            )
        return Atom(tok.text, tuple(params))

    def number(self) -> float:
        tok = self.peek()
        if tok.kind != "NUMBER":
            raise self.error(f"expected a number but found {self.describe(tok)}")
        self.next()
        return float(tok.text)


def parse_spec(text: str, registry: PredicateRegistry, filename: str = "<spec>") -> Spec:
    return _Parser(text, registry, filename).parse()


def parse_spec_file(path, registry: PredicateRegistry) -> Spec:
    with open(path, encoding="utf-8") as f:
        return parse_spec(f.read(), registry, filename=str(path))


# ---------------------------------------------------------------------------
# Printer

_ENSURING, _CHOICE, _SEQ, _ACHIEVE = range(4)


def _fmt_number(x: float) -> str:
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def print_pred(pred: Pred, level: int = 0) -> str:
    # levels: 0 = or, 1 = and, 2 = atom
    if isinstance(pred, Atom):
        if not pred.params:
            return pred.name
        return f"{pred.name}({','.join(_fmt_number(p) for p in pred.params)})"
    own = 0 if isinstance(pred, Or) else 1
    word = "or" if isinstance(pred, Or) else "and"
    text = f"{print_pred(pred.left, own)} {word} {print_pred(pred.right, own + 1)}"
    return f"({text})" if own < level else text


def _prec(spec: Spec) -> int:
    return {Ensuring: _ENSURING, Choice: _CHOICE, Seq: _SEQ, Achieve: _ACHIEVE}[type(spec)]


def _print(spec: Spec, level: int) -> str:
    if isinstance(spec, Achieve):
        text = f"achieve {print_pred(spec.pred, 0)}"
    elif isinstance(spec, Ensuring):
        text = f"{_print(spec.spec, _ENSURING)} ensuring {print_pred(spec.pred, 0)}"
    elif isinstance(spec, Seq):
        text = f"{_print(spec.first, _SEQ)}; {_print(spec.second, _SEQ + 1)}"
    else:
        text = f"{_print(spec.left, _CHOICE)} or {_print(spec.right, _CHOICE + 1)}"
    return f"({text})" if _prec(spec) < level else text


def print_spec(spec: Spec) -> str:
    return _print(spec, _ENSURING)
