"""A small bottom-up Datalog evaluator with stratified negation.

Rules are pure joins (no built-ins). Evaluation is semi-naive: after the
first round, each rule is re-run once per recursive body literal with that
literal restricted to the tuples derived in the previous round.

Rule text syntax, one clause per ``.``-terminated statement::

    .decl Reach(src: node, dst: node)
    Reach(X, Y) :- Edge(X, Y).
    Reach(X, Z) :- Reach(X, Y), Edge(Y, Z), !Blocked(Z).

Identifiers starting with an upper-case letter or ``_`` are variables
(a leading ``_`` marks a wildcard); integers, quoted strings and bare
lower-case words are constants. ``//`` and ``#`` start comments.
"""

from __future__ import annotations

import itertools
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import networkx as nx

log = logging.getLogger(__name__)


class DatalogError(ValueError):
    pass


class ParseError(DatalogError):
    pass


class SchemaError(DatalogError):
    pass


class UnsafeRuleError(DatalogError):
    pass


class UnstratifiableError(DatalogError):
    pass


@dataclass(frozen=True)
class Var:
    name: str

    @property
    def is_wildcard(self) -> bool:
        return self.name.startswith("_")

    def __str__(self) -> str:
        return "_" if self.is_wildcard else self.name


@dataclass(frozen=True)
class Literal:
    pred: str
    terms: tuple
    negated: bool = False

    @property
    def arity(self) -> int:
        return len(self.terms)

    def variables(self) -> set[str]:
        return {t.name for t in self.terms if isinstance(t, Var) and not t.is_wildcard}

    def __str__(self) -> str:
        args = ", ".join(str(t) if isinstance(t, Var) else _render_const(t) for t in self.terms)
        return f"{'!' if self.negated else ''}{self.pred}({args})"


@dataclass(frozen=True)
class Rule:
    head: Literal
    body: tuple[Literal, ...] = ()

    def __post_init__(self) -> None:
        if self.head.negated:
            raise UnsafeRuleError(f"negated head in {self}")
        positive = set()
        for lit in self.body:
            if not lit.negated:
                positive |= lit.variables()
        missing = self.head.variables() - positive
        if missing:
            raise UnsafeRuleError(f"head variables {sorted(missing)} not bound in {self}")
        for lit in self.body:
            if lit.negated and lit.variables() - positive:
                raise UnsafeRuleError(f"negated literal {lit} has unbound variables in {self}")
        if any(isinstance(t, Var) and t.is_wildcard for t in self.head.terms):
            raise UnsafeRuleError(f"wildcard in head of {self}")

    def __str__(self) -> str:
        if not self.body:
            return f"{self.head}."
        return f"{self.head} :- {', '.join(map(str, self.body))}."


@dataclass(frozen=True)
class Schema:
    name: str
    arity: int
    column_kinds: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.arity < 1 or self.arity != len(self.column_kinds):
            raise SchemaError(f"bad schema for {self.name}")


@dataclass
class Program:
    schemas: dict[str, Schema] = field(default_factory=dict)
    rules: list[Rule] = field(default_factory=list)

    def extend(self, other: "Program") -> "Program":
        merged = Program(dict(self.schemas), list(self.rules))
        for name, schema in other.schemas.items():
            if name in merged.schemas and merged.schemas[name] != schema:
                raise SchemaError(f"conflicting declarations of {name}")
            merged.schemas[name] = schema
        merged.rules.extend(other.rules)
        merged.check()
        return merged

    def check(self) -> None:
        for rule in self.rules:
            for lit in (rule.head, *rule.body):
                schema = self.schemas.get(lit.pred)
                if schema is not None and schema.arity != lit.arity:
                    raise SchemaError(f"{lit} does not match arity {schema.arity} of {lit.pred}")

    @property
    def derived(self) -> set[str]:
        return {r.head.pred for r in self.rules}


# ---- parsing ---------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*|\#[^\n]*)
  | (?P<implies>:-)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>-?0x[0-9a-fA-F]+|-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<directive>\.decl\b)
  | (?P<punct>[(),.!:])
    """,
    re.VERBOSE,
)


def _tokens(text: str) -> Iterator[tuple[str, str, int]]:
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            line = text.count("\n", 0, pos) + 1
            raise ParseError(f"line {line}: unexpected character {text[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            yield kind, m.group(), text.count("\n", 0, pos) + 1
        pos = m.end()


class _Parser:
    def __init__(self, text: str):
        self.toks = list(_tokens(text))
        self.i = 0
        self.fresh = itertools.count()

    def peek(self) -> tuple[str, str, int] | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, value: str | None = None, kind: str | None = None) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input")
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            raise ParseError(f"line {tok[2]}: expected {value or kind}, got {tok[1]!r}")
        self.i += 1
        return tok

    def program(self) -> Program:
        prog = Program()
        while self.peek() is not None:
            if self.peek()[0] == "directive":
                schema = self.decl()
                if schema.name in prog.schemas:
                    raise SchemaError(f"duplicate declaration of {schema.name}")
                prog.schemas[schema.name] = schema
            else:
                prog.rules.append(self.rule())
        prog.check()
        return prog

    def decl(self) -> Schema:
        self.take(kind="directive")
        name = self.take(kind="ident")[1]
        self.take("(")
        kinds = []
        while True:
            self.take(kind="ident")
            kind = "atom"
            if self.peek() and self.peek()[1] == ":":
                self.take(":")
                kind = self.take(kind="ident")[1]
            kinds.append(kind)
            if self._separator() == ")":
                break
        if self.peek() and self.peek()[1] == ".":
            self.take(".")
        return Schema(name, len(kinds), tuple(kinds))

    def rule(self) -> Rule:
        head = self.literal()
        body: list[Literal] = []
        if self.peek() and self.peek()[0] == "implies":
            self.take(":-")
            while True:
                body.append(self.literal())
                sep = self.take()[1]
                if sep == ".":
                    break
                if sep != ",":
                    raise ParseError(f"expected ',' or '.', got {sep!r}")
        else:
            self.take(".")
        return Rule(head, tuple(body))

    def literal(self) -> Literal:
        negated = False
        if self.peek() and self.peek()[1] == "!":
            self.take("!")
            negated = True
        name = self.take(kind="ident")[1]
        self.take("(")
        terms = []
        while True:
            terms.append(self.term())
            if self._separator() == ")":
                break
        return Literal(name, tuple(terms), negated)

    def _separator(self) -> str:
        _, text, line = self.take()
        if text not in (",", ")"):
            raise ParseError(f"line {line}: expected ',' or ')', got {text!r}")
        return text

    def term(self) -> object:
        kind, text, line = self.take()
        if kind == "number":
            return int(text, 16) if "x" in text.lower() else int(text, 10)
        if kind == "string":
            return bytes(text[1:-1], "utf-8").decode("unicode_escape")
        if kind == "ident":
            if text == "_":
                return Var(f"_{next(self.fresh)}")
            if text[0].isupper() or text[0] == "_":
                return Var(text)
            return text
        raise ParseError(f"line {line}: bad term {text!r}")


def parse_program(text: str) -> Program:
    return _Parser(text).program()


def _render_const(value: object) -> str:
    if isinstance(value, int):
        return str(value)
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


# ---- relations and the fact store -------------------------------------------


class Relation:
    """A tuple set with lazily built, incrementally maintained hash indexes."""

    __slots__ = ("tuples", "indexes")

    def __init__(self, tuples: Iterable[tuple] = ()):
        self.tuples: set[tuple] = set(tuples)
        self.indexes: dict[tuple[int, ...], dict[tuple, list[tuple]]] = {}

    def add(self, tup: tuple) -> bool:
        if tup in self.tuples:
            return False
        self.tuples.add(tup)
        for cols, index in self.indexes.items():
            index.setdefault(tuple(tup[c] for c in cols), []).append(tup)
        return True

    def index(self, cols: tuple[int, ...]) -> dict[tuple, list[tuple]]:
        idx = self.indexes.get(cols)
        if idx is None:
            idx = {}
            for tup in self.tuples:
                idx.setdefault(tuple(tup[c] for c in cols), []).append(tup)
            self.indexes[cols] = idx
        return idx

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self) -> Iterator[tuple]:
        return iter(self.tuples)


class FactStore:
    """Named relations plus the stratification they were evaluated under."""

    def __init__(
        self,
        relations: Mapping[str, Iterable[tuple]] | None = None,
        schemas: Mapping[str, Schema] | None = None,
    ):
        self.schemas: dict[str, Schema] = dict(schemas or {})
        self.relations: dict[str, Relation] = {}
        self.strata: list[list[str]] = []
        for name, tuples in (relations or {}).items():
            self.add_all(name, tuples)

    def declare(self, schema: Schema) -> None:
        old = self.schemas.get(schema.name)
        if old is not None and old != schema:
            raise SchemaError(f"conflicting declarations of {schema.name}")
        self.schemas[schema.name] = schema
        self.relations.setdefault(schema.name, Relation())

    def relation(self, name: str) -> Relation:
        rel = self.relations.get(name)
        if rel is None:
            rel = self.relations[name] = Relation()
        return rel

    def add(self, name: str, tup: Sequence) -> bool:
        tup = tuple(tup)
        schema = self.schemas.get(name)
        if schema is not None and len(tup) != schema.arity:
            raise SchemaError(f"{name} expects arity {schema.arity}, got {tup!r}")
        return self.relation(name).add(tup)

    def add_all(self, name: str, tuples: Iterable[Sequence]) -> None:
        self.relation(name)
        for tup in tuples:
            self.add(name, tup)

    def get(self, name: str) -> frozenset[tuple]:
        rel = self.relations.get(name)
        return frozenset(rel.tuples) if rel is not None else frozenset()

    def __contains__(self, item: tuple[str, tuple]) -> bool:
        name, tup = item
        rel = self.relations.get(name)
        return rel is not None and tuple(tup) in rel.tuples

    def copy(self) -> "FactStore":
        out = FactStore(schemas=self.schemas)
        for name, rel in self.relations.items():
            out.relations[name] = Relation(rel.tuples)
        out.strata = [list(s) for s in self.strata]
        return out

    def as_dict(self) -> dict[str, set[tuple]]:
        return {n: set(r.tuples) for n, r in self.relations.items()}

    def sizes(self) -> dict[str, int]:
        return {n: len(r) for n, r in sorted(self.relations.items())}


# ---- stratification --------------------------------------------------------


def stratify(rules: Iterable[Rule]) -> list[list[str]]:
    """Order predicates so negated dependencies are computed first."""
    graph = nx.DiGraph()
    for rule in rules:
        head = rule.head.pred
        graph.add_node(head)
        for lit in rule.body:
            neg = graph.get_edge_data(lit.pred, head, {}).get("neg", False)
            graph.add_edge(lit.pred, head, neg=neg or lit.negated)
    if not graph:
        return []
    comps = nx.condensation(graph)
    mapping = comps.graph["mapping"]
    for u, v, data in graph.edges(data=True):
        if data["neg"] and mapping[u] == mapping[v]:
            raise UnstratifiableError(f"negation of {u} in a cycle through {v}")
    level: dict[int, int] = {}
    for comp in nx.topological_sort(comps):
        best = 0
        for pred in comps.predecessors(comp):
            members = comps.nodes[pred]["members"]
            neg = any(
                graph.edges[u, v]["neg"]
                for u in members
                for v in comps.nodes[comp]["members"]
                if graph.has_edge(u, v)
            )
            best = max(best, level[pred] + int(neg))
        level[comp] = best
    strata: dict[int, list[str]] = {}
    for pred, comp in mapping.items():
        strata.setdefault(level[comp], []).append(pred)
    return [sorted(strata[k]) for k in sorted(strata)]


# ---- evaluation ------------------------------------------------------------


@dataclass
class _Step:
    lit: Literal
    bound_cols: tuple[int, ...]
    bound_src: tuple[tuple[bool, object], ...]  # (is_slot, slot index or constant)
    new_cols: tuple[tuple[int, int], ...]  # (column, slot)
    check_cols: tuple[tuple[int, int], ...]  # repeated variable inside the literal


class _Plan:
    def __init__(self, rule: Rule):
        self.rule = rule
        slots: dict[str, int] = {}
        self.steps: list[_Step] = []
        for lit in rule.body:
            bound_cols, bound_src, new_cols, check_cols = [], [], [], []
            local: dict[str, int] = {}
            for col, term in enumerate(lit.terms):
                if not isinstance(term, Var):
                    bound_cols.append(col)
                    bound_src.append((False, term))
                elif term.name in slots:
                    bound_cols.append(col)
                    bound_src.append((True, slots[term.name]))
                elif term.name in local:
                    check_cols.append((col, local[term.name]))
                elif lit.negated:
                    continue  # wildcard inside a negation: projected away
                else:
                    local[term.name] = len(slots) + len(local)
                    new_cols.append((col, local[term.name]))
            if not lit.negated:
                slots.update(local)
            self.steps.append(
                _Step(lit, tuple(bound_cols), tuple(bound_src), tuple(new_cols), tuple(check_cols))
            )
        self.head_src = tuple(
            (True, slots[t.name]) if isinstance(t, Var) else (False, t) for t in rule.head.terms
        )
        self.n_slots = len(slots)

    def run(
        self,
        relation_of,
        delta_at: int | None = None,
        delta: Relation | None = None,
        seed: Sequence[object] | None = None,
    ) -> Iterator[tuple]:
        envs: list[tuple] = [tuple(seed) if seed is not None else ()]
        for pos, step in enumerate(self.steps):
            rel = delta if pos == delta_at else relation_of(step.lit.pred)
            if not envs:
                return
            out: list[tuple] = []
            if step.lit.negated:
                cols = step.bound_cols
                if len(cols) == step.lit.arity:
                    tuples = rel.tuples
                    for env in envs:
                        key = _key(step.bound_src, env)
                        if _reorder(cols, key, step.lit.arity) not in tuples:
                            out.append(env)
                else:
                    idx = rel.index(cols)
                    for env in envs:
                        if _key(step.bound_src, env) not in idx:
                            out.append(env)
                envs = out
                continue
            if step.bound_cols:
                idx = rel.index(step.bound_cols)
                for env in envs:
                    for tup in idx.get(_key(step.bound_src, env), ()):
                        if step.check_cols and not _check(step, tup):
                            continue
                        out.append(env + tuple(tup[c] for c, _ in step.new_cols))
            else:
                for tup in rel.tuples:
                    if step.check_cols and not _check(step, tup):
                        continue
                    ext = tuple(tup[c] for c, _ in step.new_cols)
                    out.extend(env + ext for env in envs)
            envs = out
        for env in envs:
            yield tuple(env[s] if is_slot else s for is_slot, s in self.head_src)


def _key(src: tuple[tuple[bool, object], ...], env: tuple) -> tuple:
    return tuple(env[v] if is_slot else v for is_slot, v in src)


def _reorder(cols: tuple[int, ...], key: tuple, arity: int) -> tuple:
    if cols == tuple(range(arity)):
        return key
    out = [None] * arity
    for c, v in zip(cols, key):
        out[c] = v
    return tuple(out)


def _check(step: _Step, tup: tuple) -> bool:
    firsts = {slot: col for col, slot in step.new_cols}
    return all(tup[col] == tup[firsts[slot]] for col, slot in step.check_cols)


def evaluate(store: FactStore, rules: Sequence[Rule] | Program) -> FactStore:
    """Least fixpoint of ``rules`` over ``store``; the input is not modified."""
    schemas: Iterable[Schema] = ()
    if isinstance(rules, Program):
        schemas = rules.schemas.values()
        rules = rules.rules
    rules = list(rules)
    out = store.copy()
    for schema in schemas:
        out.declare(schema)
    strata = stratify(rules)
    out.strata = strata
    by_head: dict[str, list[_Plan]] = {}
    for rule in rules:
        by_head.setdefault(rule.head.pred, []).append(_Plan(rule))
    for rule in rules:
        for lit in (rule.head, *rule.body):
            out.relation(lit.pred)
    for stratum in strata:
        plans = [p for pred in stratum for p in by_head.get(pred, ())]
        if plans:
            _evaluate_stratum(out, plans, set(stratum))
    return out


def _evaluate_stratum(store: FactStore, plans: list[_Plan], preds: set[str]) -> None:
    rel = store.relation
    delta: dict[str, Relation] = {}
    for plan in plans:
        target = rel(plan.rule.head.pred)
        fresh = [t for t in plan.run(rel) if t not in target.tuples]
        for tup in fresh:
            delta.setdefault(plan.rule.head.pred, Relation()).tuples.add(tup)
    for pred, d in delta.items():
        for tup in d.tuples:
            store.add(pred, tup)
    rounds = 1
    while delta:
        new: dict[str, Relation] = {}
        for plan in plans:
            target = rel(plan.rule.head.pred)
            for pos, step in enumerate(plan.steps):
                if step.lit.negated or step.lit.pred not in preds:
                    continue
                d = delta.get(step.lit.pred)
                if d is None:
                    continue
                for tup in plan.run(rel, pos, d):
                    if tup not in target.tuples:
                        new.setdefault(plan.rule.head.pred, Relation()).tuples.add(tup)
        for pred, d in new.items():
            for tup in d.tuples:
                store.add(pred, tup)
        delta = new
        rounds += 1
    log.debug("stratum %s closed after %d rounds", sorted(preds), rounds)


# ---- provenance ------------------------------------------------------------


def explain(store: FactStore, rule: Rule, head: Sequence[object]) -> list[tuple[Literal, tuple]] | None:
    """One ground instance of ``rule``'s body deriving ``head``, or ``None``.

    Each entry is ``(literal, ground tuple)``; negated literals report the
    bound tuple that was confirmed absent (wildcards shown as ``None``).
    """
    head = tuple(head)
    env: dict[str, object] = {}
    for term, value in zip(rule.head.terms, head):
        if isinstance(term, Var):
            if env.setdefault(term.name, value) != value:
                return None
        elif term != value:
            return None

    def solve(i: int, env: dict[str, object]) -> list[tuple[Literal, tuple]] | None:
        if i == len(rule.body):
            return []
        lit = rule.body[i]
        rel = store.relation(lit.pred)
        cols = tuple(
            c for c, t in enumerate(lit.terms) if not isinstance(t, Var) or t.name in env
        )
        key = tuple(env[t.name] if isinstance(t, Var) else t for t in (lit.terms[c] for c in cols))
        matches = rel.index(cols).get(key, [])
        if lit.negated:
            if matches:
                return None
            pattern = tuple(env.get(t.name) if isinstance(t, Var) else t for t in lit.terms)
            rest = solve(i + 1, env)
            return None if rest is None else [(lit, pattern)] + rest
        for tup in sorted(matches, key=repr):
            local = dict(env)
            if all(
                local.setdefault(t.name, v) == v
                for t, v in zip(lit.terms, tup)
                if isinstance(t, Var)
            ):
                rest = solve(i + 1, local)
                if rest is not None:
                    return [(lit, tup)] + rest
        return None

    return solve(0, env)


# ---- export ----------------------------------------------------------------


def format_atom(value: object) -> str:
    return str(value)


def export_tsv(store: FactStore, directory: str, names: Iterable[str] | None = None) -> list[str]:
    """Write one ``<relation>.tsv`` per relation, rows sorted lexicographically."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for name in sorted(names if names is not None else store.relations):
        rows = sorted("\t".join(format_atom(a) for a in tup) for tup in store.relation(name).tuples)
        path = os.path.join(directory, f"{name}.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(row + "\n" for row in rows)
        written.append(path)
    return written
