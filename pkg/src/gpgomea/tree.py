"""Fixed-template tree genotypes for symbolic regression.

A genotype is a perfect r-ary tree of height h stored as a flat array in
pre-order. Every position always holds a symbol; positions that are not
reachable when functions consume only their leftmost ``arity`` children are
introns. Positions are 0-based (the root is position 0).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels as K

# name -> (kernel op id, arity, infix symbol or None for call syntax)
OPERATORS = {
    "+": (K.OP_ADD, 2, "+"),
    "-": (K.OP_SUB, 2, "-"),
    "*": (K.OP_MUL, 2, "*"),
    "aq": (K.OP_AQ, 2, None),
    "sin": (K.OP_SIN, 1, None),
    "cos": (K.OP_COS, 1, None),
    "exp": (K.OP_EXP, 1, None),
    "log": (K.OP_LOG, 1, None),
}
DEFAULT_FUNCTIONS = ("+", "-", "*", "aq")


class TreeError(ValueError):
    """Raised for malformed symbol sets, genotypes or expressions."""


@dataclass(frozen=True)
class Symbol:
    """One node label: a function, a feature reference, or a constant."""

    kind: str  # "function" | "feature" | "constant"
    name: str = ""
    arity: int = 0
    index: int = -1
    value: float = 0.0

    @classmethod
    def function(cls, name: str) -> "Symbol":
        if name not in OPERATORS:
            raise TreeError(f"unknown function {name!r}")
        return cls("function", name=name, arity=OPERATORS[name][1])

    @classmethod
    def feature(cls, index: int) -> "Symbol":
        return cls("feature", name=f"x{index}", index=index)

    @classmethod
    def constant(cls, value: float) -> "Symbol":
        if not math.isfinite(value):
            raise TreeError(f"constant must be finite, got {value}")
        return cls("constant", value=float(value))

    def __str__(self) -> str:
        if self.kind == "constant":
            return repr(self.value)
        return self.name


@dataclass(frozen=True)
class SymbolSet:
    """Function set, feature terminals and an optional ERC range.

    Symbols are encoded as small integers: ``0..F-1`` are the functions in
    the given order, ``F..F+d-1`` the features, and ``F+d`` the constant code
    (its value lives in a parallel float array).
    """

    functions: tuple[str, ...]
    n_features: int
    erc: tuple[float, float] | None = None
    kinds: np.ndarray = field(init=False, repr=False, compare=False)
    args: np.ndarray = field(init=False, repr=False, compare=False)
    arities: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.functions:
            raise TreeError("function set is empty")
        if self.n_features < 1:
            raise TreeError("at least one feature terminal is required")
        for name in self.functions:
            if name not in OPERATORS:
                raise TreeError(f"unknown function {name!r}")
        if len(set(self.functions)) != len(self.functions):
            raise TreeError("duplicate functions")
        if self.erc is not None:
            lo, hi = self.erc
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise TreeError(f"invalid ERC bounds {self.erc}")
        n_codes = len(self.functions) + self.n_features + 1
        kinds = np.empty(n_codes, dtype=np.int64)
        args = np.zeros(n_codes, dtype=np.int64)
        arities = np.zeros(n_codes, dtype=np.int64)
        for c, name in enumerate(self.functions):
            kinds[c] = K.KIND_FUNCTION
            args[c] = OPERATORS[name][0]
            arities[c] = OPERATORS[name][1]
        for j in range(self.n_features):
            kinds[len(self.functions) + j] = K.KIND_FEATURE
            args[len(self.functions) + j] = j
        kinds[-1] = K.KIND_CONSTANT
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "arities", arities)

    @classmethod
    def for_data(cls, X: np.ndarray, functions=DEFAULT_FUNCTIONS,
                 use_erc: bool = False) -> "SymbolSet":
        """Symbol set for a training matrix; ERC bounds span ``[min X, max X]``."""
        X = np.asarray(X, dtype=float)
        erc = (float(X.min()), float(X.max())) if use_erc else None
        return cls(tuple(functions), X.shape[1], erc)

    @property
    def n_functions(self) -> int:
        return len(self.functions)

    @property
    def const_code(self) -> int:
        return self.n_functions + self.n_features

    @property
    def n_terminal_choices(self) -> int:
        """Features plus one slot for the ERC when present."""
        return self.n_features + (self.erc is not None)

    @property
    def arity(self) -> int:
        """Template arity r: the largest function arity."""
        return max(OPERATORS[f][1] for f in self.functions)

    def is_function(self, code: int) -> bool:
        return code < self.n_functions

    def symbol(self, code: int, value: float = 0.0) -> Symbol:
        if code < self.n_functions:
            return Symbol.function(self.functions[code])
        if code < self.const_code:
            return Symbol.feature(code - self.n_functions)
        return Symbol.constant(value)

    def encode(self, sym: Symbol) -> tuple[int, float]:
        if sym.kind == "function":
            try:
                return self.functions.index(sym.name), 0.0
            except ValueError:
                raise TreeError(f"function {sym.name!r} not in set") from None
        if sym.kind == "feature":
            if not 0 <= sym.index < self.n_features:
                raise TreeError(f"feature x{sym.index} out of range")
            return self.n_functions + sym.index, 0.0
        return self.const_code, sym.value


def template_size(h: int, r: int) -> int:
    """Number of nodes in a perfect r-ary tree of height h."""
    if h < 0 or r < 1:
        raise TreeError(f"invalid template h={h}, r={r}")
    if r == 1:
        return h + 1
    return (r ** (h + 1) - 1) // (r - 1)


@dataclass(frozen=True)
class Template:
    """Pre-order index arithmetic for a perfect r-ary tree."""

    h: int
    r: int
    size: int
    depth: np.ndarray
    children: np.ndarray  # (size, r), -1 at depth h
    parent: np.ndarray  # -1 at the root

    def child(self, p: int, k: int) -> int:
        return int(self.children[p, k])


@lru_cache(maxsize=None)
def template(h: int, r: int) -> Template:
    size = template_size(h, r)
    depth = np.empty(size, dtype=np.int64)
    children = np.full((size, max(r, 2)), -1, dtype=np.int64)
    parent = np.full(size, -1, dtype=np.int64)

    def fill(p: int, d: int) -> int:
        depth[p] = d
        nxt = p + 1
        if d < h:
            for k in range(r):
                children[p, k] = nxt
                parent[nxt] = p
                nxt = fill(nxt, d + 1)
        return nxt

    fill(0, 0)
    return Template(h, r, size, depth, children, parent)


@dataclass
class GenotypeTree:
    """A template genotype: symbol codes plus constant values, in pre-order."""

    h: int
    r: int
    codes: np.ndarray
    consts: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.consts = np.asarray(self.consts, dtype=np.float64)
        ell = template_size(self.h, self.r)
        if self.codes.shape != (ell,) or self.consts.shape != (ell,):
            raise TreeError(f"genotype must have exactly {ell} positions")

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def template(self) -> Template:
        return template(self.h, self.r)

    def copy(self) -> "GenotypeTree":
        return GenotypeTree(self.h, self.r, self.codes.copy(), self.consts.copy())

    def same_genotype(self, other: "GenotypeTree") -> bool:
        return (np.array_equal(self.codes, other.codes)
                and np.array_equal(self.consts, other.consts))

    @classmethod
    def from_symbols(cls, symbols, sets: SymbolSet, h: int) -> "GenotypeTree":
        pairs = [sets.encode(s) for s in symbols]
        tree = cls(h, sets.arity, [c for c, _ in pairs], [v for _, v in pairs])
        check_tree(tree, sets)
        return tree

    def symbols(self, sets: SymbolSet) -> list[Symbol]:
        return [sets.symbol(int(c), float(v)) for c, v in zip(self.codes, self.consts)]


def check_tree(tree: GenotypeTree, sets: SymbolSet) -> None:
    """Raise :class:`TreeError` unless the genotype fits ``sets``."""
    if tree.r != sets.arity:
        raise TreeError(f"template arity {tree.r} != symbol-set arity {sets.arity}")
    if tree.codes.min() < 0 or tree.codes.max() > sets.const_code:
        raise TreeError("symbol code out of range")
    leaves = tree.template.depth == tree.h
    if np.any(tree.codes[leaves] < sets.n_functions):
        raise TreeError("function placed at maximum depth")
    if not np.all(np.isfinite(tree.consts)):
        raise TreeError("non-finite constant")


def random_population(rng: np.random.Generator, n: int, h: int,
                      sets: SymbolSet) -> tuple[np.ndarray, np.ndarray]:
    """Half-and-Half codes/consts matrices of shape ``(n, ell)``.

    Each row is Full or Grow with probability 0.5. Grow makes every position
    above the leaves a function with probability 0.5, independently, so the
    subtrees under terminals (introns) are filled as well.
    """
    if h < 0:
        raise TreeError("height must be non-negative")
    tpl = template(h, sets.arity)
    ell = tpl.size
    internal = tpl.depth < h
    full = rng.random(n) < 0.5
    grow_func = rng.random((n, ell)) < 0.5
    is_func = internal[None, :] & (full[:, None] | grow_func)
    func_codes = rng.integers(0, sets.n_functions, size=(n, ell))
    term_pick = rng.integers(0, sets.n_terminal_choices, size=(n, ell))
    codes = np.where(is_func, func_codes, sets.n_functions + term_pick)
    consts = np.zeros((n, ell))
    if sets.erc is not None:
        values = rng.uniform(sets.erc[0], sets.erc[1], size=(n, ell))
        is_const = codes == sets.const_code
        consts[is_const] = values[is_const]
    return codes.astype(np.int64), consts


def init_half_and_half(rng: np.random.Generator, h: int, sets: SymbolSet) -> GenotypeTree:
    codes, consts = random_population(rng, 1, h, sets)
    return GenotypeTree(h, sets.arity, codes[0], consts[0])


def active_nodes(tree: GenotypeTree, sets: SymbolSet) -> set[int]:
    """Positions that influence the output."""
    tpl = tree.template
    mask = np.empty(tpl.size, dtype=np.bool_)
    K.active_mask(tree.codes, sets.arities, tpl.children, mask)
    return set(np.flatnonzero(mask).tolist())


def evaluate(tree: GenotypeTree, X: np.ndarray, sets: SymbolSet) -> np.ndarray:
    """Output vector of the tree on the rows of ``X``.

    Non-finite intermediate values propagate; nothing is clamped.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < sets.n_features:
        raise TreeError(f"expected a matrix with {sets.n_features} columns")
    XT = np.ascontiguousarray(X.T)
    tpl = tree.template
    buf = np.empty((tpl.size, X.shape[0]))
    with np.errstate(all="ignore"):
        out = K.eval_template(tree.codes, tree.consts, sets.kinds, sets.args,
                              sets.arities, tpl.children, XT, buf)
    return out.copy()


def semantic_change(old: GenotypeTree, new: GenotypeTree, sets: SymbolSet) -> bool:
    """True unless ``new`` provably computes the same function as ``old``.

    The check is syntactic on the active positions of both trees.
    """
    act_old = active_nodes(old, sets)
    act_new = active_nodes(new, sets)
    if act_old != act_new:
        return True
    idx = np.fromiter(act_new, dtype=np.int64)
    return bool(np.any(old.codes[idx] != new.codes[idx])
                or np.any(old.consts[idx] != new.consts[idx]))


def format_constant(v: float) -> str:
    text = repr(float(v))
    return f"({text})" if v < 0 or text.startswith("-") else text


def to_infix(tree: GenotypeTree, sets: SymbolSet) -> str:
    """Parenthesized infix string of the active part of the tree."""
    tpl = tree.template

    def render(p: int) -> str:
        c = int(tree.codes[p])
        if c < sets.n_functions:
            name = sets.functions[c]
            _, arity, infix = OPERATORS[name]
            parts = [render(tpl.child(p, k)) for k in range(arity)]
            if infix:
                return f"({parts[0]} {infix} {parts[1]})"
            return f"{name}({', '.join(parts)})"
        if c < sets.const_code:
            return f"x{c - sets.n_functions}"
        return format_constant(tree.consts[p])

    return render(0)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf|nan)"
    r"|(?P<var>x\d+)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos = 0
    tokens = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise TreeError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


def parse_infix(text: str) -> list[Symbol]:
    """Parse an infix expression into a prefix list of symbols.

    Accepts the output of :func:`to_infix` (binary ``+ - *`` with the usual
    precedence, call syntax for named functions, signed numeric literals).
    """
    tokens = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None)

    def take(expected=None):
        nonlocal pos
        tok = peek()
        if tok[0] is None or (expected is not None and tok[1] != expected):
            raise TreeError(f"expected {expected or 'token'} at token {pos} in {text!r}")
        pos += 1
        return tok

    def expr():
        out = term()
        while peek()[1] in ("+", "-"):
            op = take()[1]
            out = [Symbol.function(op)] + out + term()
        return out

    def term():
        out = factor()
        while peek()[1] == "*":
            take()
            out = [Symbol.function("*")] + out + factor()
        return out

    def factor():
        kind, val = peek()
        if val == "-":
            take()
            inner = factor()
            if len(inner) == 1 and inner[0].kind == "constant":
                return [Symbol.constant(-inner[0].value)]
            return [Symbol.function("*"), Symbol.constant(-1.0)] + inner
        if val == "(":
            take()
            out = expr()
            take(")")
            return out
        if kind == "num":
            take()
            return [Symbol.constant(float(val))]
        if kind == "var":
            take()
            return [Symbol.feature(int(val[1:]))]
        if kind == "name":
            take()
            if val not in OPERATORS:
                raise TreeError(f"unknown function {val!r}")
            arity = OPERATORS[val][1]
            take("(")
            out = [Symbol.function(val)]
            for k in range(arity):
                if k:
                    take(",")
                out += expr()
            take(")")
            return out
        raise TreeError(f"unexpected token {val!r} in {text!r}")

    result = expr()
    if pos != len(tokens):
        raise TreeError(f"trailing input in {text!r}")
    return result


def evaluate_prefix(prefix, X: np.ndarray, sets: SymbolSet) -> np.ndarray:
    """Evaluate a prefix list of symbols (as produced by :func:`parse_infix`)."""
    X = np.asarray(X, dtype=np.float64)
    pairs = [sets.encode(s) for s in prefix]
    codes = np.array([c for c, _ in pairs], dtype=np.int64)
    consts = np.array([v for _, v in pairs], dtype=np.float64)
    buf = np.empty((len(pairs), X.shape[0]))
    with np.errstate(all="ignore"):
        out = K.eval_prefix(codes, consts, sets.kinds, sets.args, sets.arities,
                            np.ascontiguousarray(X.T), buf)
    return out.copy()


def evaluate_infix(text: str, X: np.ndarray) -> np.ndarray:
    """Parse ``text`` and evaluate it on ``X``."""
    prefix = parse_infix(text)
    names = list(DEFAULT_FUNCTIONS)
    names += sorted({s.name for s in prefix if s.kind == "function"} - set(names))
    sets = SymbolSet(tuple(names), np.asarray(X).shape[1])
    return evaluate_prefix(prefix, X, sets)
