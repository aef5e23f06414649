"""Listops: nested MAX / MIN / MED / modular-SUM expressions over digits.

Grammar: ``expr := digit | OP expr+ "]"`` with OP one of ``[MAX [MIN [MED
[SUM`` (``[SM`` is accepted as an alias of ``[SUM``). MED of an even number
of arguments is the floor of the mean of the two middle values, which keeps
every result a digit. SUM is taken mod 10.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

OPERATORS = ("[MAX", "[MIN", "[MED", "[SUM")
_ALIASES = {"[SM": "[SUM"}
_TOKEN_RE = re.compile(r"\[[A-Za-z]+|\]|[^\s\[\]]+")


class ListopsParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at token {position}")
        self.position = position


class ListopsSpecError(ValueError):
    pass


def tokenize(expr: str | Sequence[str]) -> list[str]:
    """Split an expression into symbols; ``"4]"`` becomes ``["4", "]"]``."""
    if isinstance(expr, str):
        return _TOKEN_RE.findall(expr)
    out = []
    for sym in expr:
        out.extend(_TOKEN_RE.findall(sym))
    return out


def apply_op(op: str, args: Sequence[int]) -> int:
    if op == "[MAX":
        return max(args)
    if op == "[MIN":
        return min(args)
    if op == "[SUM":
        return sum(args) % 10
    if op == "[MED":
        s = sorted(args)
        n = len(s)
        if n % 2:
            return s[n // 2]
        return (s[n // 2 - 1] + s[n // 2]) // 2
    raise ValueError(f"unknown operator {op!r}")


def _classify(sym: str):
    sym = _ALIASES.get(sym, sym)
    if sym in OPERATORS:
        return "op", sym
    if sym == "]":
        return "close", sym
    if len(sym) == 1 and sym.isdigit():
        return "digit", int(sym)
    return "bad", sym


def listops_eval(expr) -> int:
    """Recursive-descent evaluator."""
    toks = tokenize(expr)
    if not toks:
        raise ListopsParseError("empty expression", 0)

    def parse(i: int) -> tuple[int, int]:
        if i >= len(toks):
            raise ListopsParseError("unexpected end of expression", i)
        kind, val = _classify(toks[i])
        if kind == "digit":
            return val, i + 1
        if kind != "op":
            raise ListopsParseError(f"unexpected symbol {toks[i]!r}", i)
        args = []
        j = i + 1
        while True:
            if j >= len(toks):
                raise ListopsParseError(f"unclosed {val}", i)
            if _classify(toks[j])[0] == "close":
                break
            v, j = parse(j)
            args.append(v)
        if not args:
            raise ListopsParseError(f"{val} without arguments", i)
        return apply_op(val, args), j + 1

    value, end = parse(0)
    if end != len(toks):
        raise ListopsParseError("trailing symbols", end)
    return value


def listops_eval_stack(expr) -> int:
    """Explicit-stack evaluator; no recursion, so nesting depth is unbounded."""
    toks = tokenize(expr)
    if not toks:
        raise ListopsParseError("empty expression", 0)
    frames: list[tuple[str, list[int], int]] = []
    result = None
    for i, sym in enumerate(toks):
        if result is not None:
            raise ListopsParseError("trailing symbols", i)
        kind, val = _classify(sym)
        if kind == "op":
            frames.append((val, [], i))
            continue
        if kind == "digit":
            value = val
        elif kind == "close":
            if not frames:
                raise ListopsParseError("unmatched ]", i)
            op, args, _ = frames.pop()
            if not args:
                raise ListopsParseError(f"{op} without arguments", i)
            value = apply_op(op, args)
        else:
            raise ListopsParseError(f"unexpected symbol {sym!r}", i)
        if frames:
            frames[-1][1].append(value)
        else:
            result = value
    if frames:
        raise ListopsParseError(f"unclosed {frames[-1][0]}", frames[-1][2])
    return result


def expression_depth(expr) -> int:
    depth = best = 0
    for sym in tokenize(expr):
        kind, _ = _classify(sym)
        if kind == "op":
            depth += 1
            best = max(best, depth)
        elif kind == "close":
            depth -= 1
    return best


@dataclass(frozen=True)
class ListopsSpec:
    max_depth: int = 2
    max_arity: int = 4
    length_range: tuple[int, int] = (1, 32)
    operators: tuple[str, ...] = OPERATORS
    leaf_prob: float = 0.6
    n_train: int = 4000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0
    max_tries: int = 1000

    def __post_init__(self):
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ListopsSpecError(f"bad length range {self.length_range}")
        if self.max_depth < 0 or self.max_arity < 1:
            raise ListopsSpecError("max_depth must be >= 0 and max_arity >= 1")
        unknown = set(self.operators) - set(OPERATORS)
        if unknown or not self.operators:
            raise ListopsSpecError(f"unsupported operators {sorted(unknown)}")


EASY = ListopsSpec(max_depth=2, max_arity=4, length_range=(4, 32))
MEDIUM = ListopsSpec(max_depth=4, max_arity=5, length_range=(8, 128))
LISTOPS_PRESETS = {"easy": EASY, "medium": MEDIUM}


def _gen_tree(spec: ListopsSpec, rng: np.random.Generator, depth_left: int, root: bool, out: list[str]) -> None:
    if depth_left == 0 or (not root and rng.random() < spec.leaf_prob):
        out.append(str(int(rng.integers(10))))
        return
    op = spec.operators[int(rng.integers(len(spec.operators)))]
    arity = int(rng.integers(2 if spec.max_arity >= 2 else 1, spec.max_arity + 1))
    out.append(op)
    for _ in range(arity):
        _gen_tree(spec, rng, depth_left - 1, False, out)
    out.append("]")


def listops_generate(spec: ListopsSpec, rng: np.random.Generator) -> tuple[list[str], int]:
    """Draw one expression with token length inside ``spec.length_range``."""
    lo, hi = spec.length_range
    for _ in range(spec.max_tries):
        syms: list[str] = []
        _gen_tree(spec, rng, spec.max_depth, True, syms)
        if lo <= len(syms) <= hi:
            return syms, listops_eval_stack(syms)
    raise ListopsSpecError(f"no expression with length in {spec.length_range} after {spec.max_tries} tries "
                           f"(max_depth={spec.max_depth}, max_arity={spec.max_arity})")
