"""Typed-STRIPS subset of PDDL: parsing, validation and printing.

Only the ``:strips``, ``:typing`` and ``:negative-preconditions`` requirements
are accepted. Anything numeric, temporal, conditional or quantified is
rejected with :class:`UnsupportedFeature` naming the offending keyword.

Keywords are matched case-insensitively; identifiers keep their case and are
compared exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

ROOT_TYPE = "object"

SUPPORTED_REQUIREMENTS = (":strips", ":typing", ":negative-preconditions")

# Section / formula keywords from PDDL 2.1 (and a few neighbours) that we refuse.
UNSUPPORTED_SECTIONS = {
    ":durative-action", ":functions", ":derived", ":constants", ":constraints",
    ":process", ":event", ":metric", ":length", ":timed-initial-literals",
}
UNSUPPORTED_FORMULAS = {
    "or", "imply", "exists", "forall", "when", "either", "increase", "decrease",
    "assign", "scale-up", "scale-down", "=", "<", ">", "<=", ">=",
    "preference", "always", "sometime",
}
# ``at``/``over`` are only temporal when followed by these; ``(at ?b ?r)`` is a plain atom.
TEMPORAL_QUALIFIERS = {"at": {"start", "end"}, "over": {"all"}}


class PddlError(Exception):
    """Base class for all PDDL errors; carries an optional source position."""

    def __init__(self, reason: str, line: int | None = None, column: int | None = None):
        self.reason = reason
        self.line = line
        self.column = column
        where = f"{line}:{column}: " if line is not None else ""
        super().__init__(f"{where}{reason}")


class PddlSyntaxError(PddlError):
    pass


class UnsupportedFeature(PddlError):
    def __init__(self, feature: str, line: int | None = None, column: int | None = None):
        self.feature = feature
        super().__init__(f"unsupported PDDL feature: {feature}", line, column)


class SemanticError(PddlError):
    pass


class DomainMismatch(PddlError):
    pass


# ---------------------------------------------------------------------------
# Data model


@dataclass(frozen=True, order=True)
class Atom:
    predicate: str
    args: tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate,) + self.args) + ")"


@dataclass(frozen=True)
class Literal:
    atom: Atom
    positive: bool = True

    def __str__(self) -> str:
        return str(self.atom) if self.positive else f"(not {self.atom})"


@dataclass(frozen=True)
class Predicate:
    name: str
    parameters: tuple[tuple[str, str], ...] = ()

    @property
    def arity(self) -> int:
        return len(self.parameters)


@dataclass(frozen=True)
class Action:
    name: str
    parameters: tuple[tuple[str, str], ...] = ()
    precondition: tuple[Literal, ...] = ()
    effect: tuple[Literal, ...] = ()


@dataclass(frozen=True)
class Domain:
    name: str
    requirements: tuple[str, ...] = ()
    types: tuple[tuple[str, str], ...] = ()
    predicates: tuple[Predicate, ...] = ()
    actions: tuple[Action, ...] = ()

    def predicate(self, name: str) -> Predicate:
        for p in self.predicates:
            if p.name == name:
                return p
        raise KeyError(name)

    def action(self, name: str) -> Action:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def type_names(self) -> set[str]:
        return {ROOT_TYPE} | {t for t, _ in self.types}

    def is_subtype(self, child: str, parent: str) -> bool:
        parents = dict(self.types)
        seen = set()
        while child not in seen:
            if child == parent:
                return True
            seen.add(child)
            if child == ROOT_TYPE:
                return False
            child = parents.get(child, ROOT_TYPE)
        return False


@dataclass(frozen=True)
class Problem:
    name: str
    domain_name: str
    objects: tuple[tuple[str, str], ...] = ()
    init: frozenset[Atom] = field(default_factory=frozenset)
    goal: tuple[Literal, ...] = ()

    @property
    def object_names(self) -> tuple[str, ...]:
        return tuple(o for o, _ in self.objects)


# ---------------------------------------------------------------------------
# S-expression reader


@dataclass(frozen=True)
class Token:
    value: str
    line: int
    column: int

    @property
    def key(self) -> str:
        return self.value.lower()


class SList(list):
    """A parenthesised list that remembers where it opened."""

    def __init__(self, items: Iterable = (), line: int = 0, column: int = 0):
        super().__init__(items)
        self.line = line
        self.column = column


Node = Union[Token, SList]


def _tokenize(text: str) -> Iterator[Token]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0]
        i = 0
        n = len(line)
        while i < n:
            ch = line[i]
            if ch.isspace():
                i += 1
            elif ch in "()":
                yield Token(ch, lineno, i + 1)
                i += 1
            else:
                j = i
                while j < n and not line[j].isspace() and line[j] not in "()":
                    j += 1
                yield Token(line[i:j], lineno, i + 1)
                i = j


def read_sexpr(text: str) -> SList:
    """Read exactly one top-level s-expression."""
    stack: list[SList] = []
    top: SList | None = None
    for tok in _tokenize(text):
        if tok.value == "(":
            stack.append(SList(line=tok.line, column=tok.column))
        elif tok.value == ")":
            if not stack:
                raise PddlSyntaxError("unbalanced ')'", tok.line, tok.column)
            done = stack.pop()
            if stack:
                stack[-1].append(done)
            elif top is None:
                top = done
            else:
                raise PddlSyntaxError("more than one top-level expression", done.line, done.column)
        else:
            if not stack:
                raise PddlSyntaxError(f"unexpected token {tok.value!r} outside parentheses",
                                      tok.line, tok.column)
            stack[-1].append(tok)
    if stack:
        raise PddlSyntaxError("unterminated '('", stack[-1].line, stack[-1].column)
    if top is None:
        raise PddlSyntaxError("empty input", 1, 1)
    return top


def _pos(node: Node) -> tuple[int, int]:
    return node.line, node.column


def _head(node: Node) -> Token | None:
    if isinstance(node, SList) and node and isinstance(node[0], Token):
        return node[0]
    return None


def _expect_list(node: Node, what: str) -> SList:
    if not isinstance(node, SList):
        raise PddlSyntaxError(f"expected {what}, got {node.value!r}", *_pos(node))
    return node


def _expect_name(node: Node, what: str) -> Token:
    if not isinstance(node, Token) or node.value in "()" or node.value.startswith(("?", ":")):
        raise PddlSyntaxError(f"expected {what}", *_pos(node))
    return node


def _check_requirements(items: Sequence[Node]) -> tuple[str, ...]:
    reqs = []
    for item in items:
        if not isinstance(item, Token) or not item.value.startswith(":"):
            raise PddlSyntaxError("requirement flags must be keywords", *_pos(item))
        if item.key not in SUPPORTED_REQUIREMENTS:
            raise UnsupportedFeature(item.key.lstrip(":"), item.line, item.column)
        reqs.append(item.key)
    return tuple(reqs)


def _typed_list(items: Sequence[Node], variables: bool) -> list[tuple[Token, Token | None]]:
    """Parse ``a b - t c`` into [(a, t), (b, t), (c, None)]."""
    out: list[tuple[Token, Token | None]] = []
    pending: list[Token] = []
    i = 0
    while i < len(items):
        item = items[i]
        if isinstance(item, SList):
            h = _head(item)
            if h is not None and h.key == "either":
                raise UnsupportedFeature("either", h.line, h.column)
            raise PddlSyntaxError("unexpected list in typed list", *_pos(item))
        if item.value == "-":
            if not pending or i + 1 >= len(items):
                raise PddlSyntaxError("dangling '-' in typed list", *_pos(item))
            t = items[i + 1]
            if isinstance(t, SList):
                h = _head(t)
                if h is not None and h.key == "either":
                    raise UnsupportedFeature("either", h.line, h.column)
                raise PddlSyntaxError("expected a type name", *_pos(t))
            _expect_name(t, "a type name")
            out.extend((p, t) for p in pending)
            pending = []
            i += 2
            continue
        if variables and not item.value.startswith("?"):
            raise PddlSyntaxError(f"expected a variable, got {item.value!r}", *_pos(item))
        if not variables:
            _expect_name(item, "a name")
        pending.append(item)
        i += 1
    out.extend((p, None) for p in pending)
    return out


def _unsupported_head(node: Node) -> Token | None:
    h = _head(node)
    if h is None:
        return None
    if h.key in UNSUPPORTED_FORMULAS:
        return h
    if h.key in TEMPORAL_QUALIFIERS and len(node) > 1 and isinstance(node[1], Token):
        nxt = node[1].key
        if nxt in TEMPORAL_QUALIFIERS[h.key] or nxt.replace(".", "", 1).isdigit():
            return h
    return None


def _formula_literals(node: Node) -> list[tuple[SList, bool]]:
    """Flatten a conjunction into (atom-node, positive) pairs."""
    node = _expect_list(node, "a formula")
    if not node:
        return []
    h = _head(node)
    if h is None:
        raise PddlSyntaxError("formula must start with a keyword or predicate", *_pos(node))
    if _unsupported_head(node) is not None:
        raise UnsupportedFeature(h.key, h.line, h.column)
    if h.key == "and":
        out: list[tuple[SList, bool]] = []
        for child in node[1:]:
            out.extend(_formula_literals(child))
        return out
    if h.key == "not":
        if len(node) != 2:
            raise PddlSyntaxError("'not' takes exactly one argument", h.line, h.column)
        inner = _expect_list(node[1], "an atom after 'not'")
        ih = _head(inner)
        bad = _unsupported_head(inner)
        if bad is not None:
            raise UnsupportedFeature(bad.key, bad.line, bad.column)
        if ih is not None and ih.key in ("and", "not"):
            raise UnsupportedFeature(f"not-{ih.key}", ih.line, ih.column)
        return [(inner, False)]
    return [(node, True)]


def _atom_parts(node: SList) -> tuple[Token, list[Token]]:
    h = _head(node)
    if h is None or h.value.startswith(("?", ":")):
        raise PddlSyntaxError("malformed atom", *_pos(node))
    args = []
    for a in node[1:]:
        if isinstance(a, SList):
            ah = _head(a)
            if ah is not None:
                raise UnsupportedFeature("function-terms", ah.line, ah.column)
            raise PddlSyntaxError("nested list inside atom", *_pos(a))
        args.append(a)
    return h, args


def _split_define(root: SList, kind: str) -> tuple[Token, list[SList]]:
    h = _head(root)
    if h is None or h.key != "define":
        raise PddlSyntaxError("expected (define ...)", *_pos(root))
    if len(root) < 2:
        raise PddlSyntaxError(f"missing ({kind} <name>)", *_pos(root))
    hdr = _expect_list(root[1], f"({kind} <name>)")
    hh = _head(hdr)
    if hh is None or hh.key != kind or len(hdr) != 2:
        raise PddlSyntaxError(f"expected ({kind} <name>)", *_pos(hdr))
    name = _expect_name(hdr[1], f"{kind} name")
    sections = []
    for sec in root[2:]:
        sec = _expect_list(sec, "a section")
        sh = _head(sec)
        if sh is None or not sh.value.startswith(":"):
            raise PddlSyntaxError("section must start with a keyword", *_pos(sec))
        sections.append(sec)
    return name, sections


# ---------------------------------------------------------------------------
# Domain


def parse_domain(text: str) -> Domain:
    """Parse and validate a domain; raises a positioned :class:`PddlError`."""
    root = read_sexpr(text)
    name, sections = _split_define(root, "domain")

    requirements: tuple[str, ...] = ()
    types: list[tuple[str, str]] = []
    type_tokens: dict[str, Token] = {}
    type_uses: list[Token] = []
    predicates: dict[str, Predicate] = {}
    actions: list[Action] = []
    action_nodes: list[SList] = []

    for sec in sections:
        key = sec[0].key
        if key in UNSUPPORTED_SECTIONS:
            raise UnsupportedFeature(key.lstrip(":"), sec[0].line, sec[0].column)
        if key == ":requirements":
            requirements = _check_requirements(sec[1:])
        elif key == ":types":
            for tname, parent in _typed_list(sec[1:], variables=False):
                if tname.value == ROOT_TYPE:
                    continue
                if tname.value in type_tokens:
                    raise SemanticError(f"duplicate type {tname.value!r}", tname.line, tname.column)
                type_tokens[tname.value] = parent or tname
                types.append((tname.value, parent.value if parent else ROOT_TYPE))
        elif key == ":predicates":
            for pnode in sec[1:]:
                pnode = _expect_list(pnode, "a predicate declaration")
                h = _head(pnode)
                if h is None or h.value.startswith(("?", ":")):
                    raise PddlSyntaxError("malformed predicate declaration", *_pos(pnode))
                if h.value in predicates:
                    raise SemanticError(f"duplicate predicate {h.value!r}", h.line, h.column)
                params = _typed_list(pnode[1:], variables=True)
                predicates[h.value] = Predicate(
                    h.value, tuple((v.value, t.value if t else ROOT_TYPE) for v, t in params))
                type_uses += [t for _, t in params if t is not None]
        elif key == ":action":
            action_nodes.append(sec)
        else:
            raise PddlSyntaxError(f"unknown domain section {sec[0].value!r}", sec[0].line, sec[0].column)

    declared = {ROOT_TYPE} | {t for t, _ in types}
    for tname, parent in types:
        if parent not in declared:
            tok = type_tokens[tname]
            raise SemanticError(f"undeclared parent type {parent!r}", tok.line, tok.column)
    for tok in type_uses:
        if tok.value not in declared:
            raise SemanticError(f"undeclared type {tok.value!r}", tok.line, tok.column)

    partial = Domain(name.value, requirements, tuple(types), tuple(predicates.values()), ())
    for tname, _ in types:
        if not partial.is_subtype(tname, ROOT_TYPE):
            tok = type_tokens[tname]
            raise SemanticError(f"cyclic type hierarchy at {tname!r}", tok.line, tok.column)

    seen_actions: set[str] = set()
    for sec in action_nodes:
        action = _parse_action(sec, partial, predicates)
        if action.name in seen_actions:
            raise SemanticError(f"duplicate action {action.name!r}", sec[1].line, sec[1].column)
        seen_actions.add(action.name)
        actions.append(action)

    return Domain(name.value, requirements, tuple(types), tuple(predicates.values()), tuple(actions))


def _parse_action(sec: SList, domain: Domain, predicates: dict[str, Predicate]) -> Action:
    if len(sec) < 2:
        raise PddlSyntaxError("action needs a name", *_pos(sec))
    aname = _expect_name(sec[1], "an action name")
    fields: dict[str, Node] = {}
    rest = sec[2:]
    if len(rest) % 2:
        raise PddlSyntaxError(f"action {aname.value!r}: keyword without value", *_pos(rest[-1]))
    for k, v in zip(rest[::2], rest[1::2]):
        if not isinstance(k, Token) or not k.value.startswith(":"):
            raise PddlSyntaxError("expected an action keyword", *_pos(k))
        if k.key not in (":parameters", ":precondition", ":effect"):
            if k.key in (":duration", ":condition"):
                raise UnsupportedFeature(k.key.lstrip(":"), k.line, k.column)
            raise PddlSyntaxError(f"unknown action keyword {k.value!r}", k.line, k.column)
        if k.key in fields:
            raise PddlSyntaxError(f"duplicate {k.value}", k.line, k.column)
        fields[k.key] = v

    params: list[tuple[str, str]] = []
    if ":parameters" in fields:
        plist = _expect_list(fields[":parameters"], "a parameter list")
        for var, t in _typed_list(plist, variables=True):
            tname = t.value if t else ROOT_TYPE
            if tname not in domain.type_names:
                raise SemanticError(f"undeclared type {tname!r}", t.line, t.column)
            if any(var.value == p for p, _ in params):
                raise SemanticError(f"duplicate parameter {var.value!r}", var.line, var.column)
            params.append((var.value, tname))
    ptypes = dict(params)
    negative_ok = ":negative-preconditions" in domain.requirements

    def literals(node: Node, is_effect: bool) -> tuple[Literal, ...]:
        out = []
        for anode, positive in _formula_literals(node):
            h, args = _atom_parts(anode)
            pred = predicates.get(h.value)
            if pred is None:
                raise SemanticError(f"undeclared predicate {h.value!r}", h.line, h.column)
            if len(args) != pred.arity:
                raise SemanticError(
                    f"arity mismatch for {h.value!r}: expected {pred.arity}, got {len(args)}",
                    h.line, h.column)
            for a, (_, want) in zip(args, pred.parameters):
                if not a.value.startswith("?"):
                    raise UnsupportedFeature("constants", a.line, a.column)
                if a.value not in ptypes:
                    raise SemanticError(f"unbound variable {a.value!r}", a.line, a.column)
                if not domain.is_subtype(ptypes[a.value], want):
                    raise SemanticError(
                        f"type mismatch: {a.value} is {ptypes[a.value]!r}, {h.value} expects {want!r}",
                        a.line, a.column)
            if not positive and not is_effect and not negative_ok:
                raise UnsupportedFeature("negative-preconditions", h.line, h.column)
            out.append(Literal(Atom(h.value, tuple(a.value for a in args)), positive))
        return tuple(out)

    pre = literals(fields[":precondition"], False) if ":precondition" in fields else ()
    eff = literals(fields[":effect"], True) if ":effect" in fields else ()
    return Action(aname.value, tuple(params), pre, eff)


# ---------------------------------------------------------------------------
# Problem


def parse_problem(text: str, domain: Domain) -> Problem:
    """Parse a problem and validate it against ``domain``."""
    root = read_sexpr(text)
    name, sections = _split_define(root, "problem")
    domain_name: Token | None = None
    objects: list[tuple[str, str]] = []
    obj_types: dict[str, str] = {}
    init_nodes: list[Node] = []
    goal_node: Node | None = None

    for sec in sections:
        key = sec[0].key
        if key in UNSUPPORTED_SECTIONS:
            raise UnsupportedFeature(key.lstrip(":"), sec[0].line, sec[0].column)
        if key == ":domain":
            if len(sec) != 2:
                raise PddlSyntaxError("expected (:domain <name>)", *_pos(sec))
            domain_name = _expect_name(sec[1], "a domain name")
        elif key == ":requirements":
            _check_requirements(sec[1:])
        elif key == ":objects":
            for obj, t in _typed_list(sec[1:], variables=False):
                tname = t.value if t else ROOT_TYPE
                if tname not in domain.type_names:
                    tok = t or obj
                    raise SemanticError(f"undeclared type {tname!r}", tok.line, tok.column)
                if obj.value in obj_types:
                    raise SemanticError(f"duplicate object {obj.value!r}", obj.line, obj.column)
                obj_types[obj.value] = tname
                objects.append((obj.value, tname))
        elif key == ":init":
            init_nodes = list(sec[1:])
        elif key == ":goal":
            if len(sec) != 2:
                raise PddlSyntaxError("expected (:goal <formula>)", *_pos(sec))
            goal_node = sec[1]
        else:
            raise PddlSyntaxError(f"unknown problem section {sec[0].value!r}", sec[0].line, sec[0].column)

    if domain_name is None:
        raise PddlSyntaxError("problem lacks (:domain ...)", *_pos(root))
    if domain_name.value != domain.name:
        raise DomainMismatch(
            f"problem is for domain {domain_name.value!r}, not {domain.name!r}",
            domain_name.line, domain_name.column)

    preds = {p.name: p for p in domain.predicates}

    def ground(anode: SList) -> Atom:
        h, args = _atom_parts(anode)
        pred = preds.get(h.value)
        if pred is None:
            raise SemanticError(f"undeclared predicate {h.value!r}", h.line, h.column)
        if len(args) != pred.arity:
            raise SemanticError(
                f"arity mismatch for {h.value!r}: expected {pred.arity}, got {len(args)}",
                h.line, h.column)
        for a, (_, want) in zip(args, pred.parameters):
            if a.value.startswith("?"):
                raise SemanticError(f"variable {a.value!r} in ground atom", a.line, a.column)
            if a.value not in obj_types:
                raise SemanticError(f"undeclared object {a.value!r}", a.line, a.column)
            if not domain.is_subtype(obj_types[a.value], want):
                raise SemanticError(
                    f"type mismatch: {a.value} is {obj_types[a.value]!r}, {h.value} expects {want!r}",
                    a.line, a.column)
        return Atom(h.value, tuple(a.value for a in args))

    init = set()
    for node in init_nodes:
        node = _expect_list(node, "an initial atom")
        h = _head(node)
        bad = _unsupported_head(node)
        if bad is not None:
            raise UnsupportedFeature(bad.key, bad.line, bad.column)
        if h is not None and h.key in ("not", "and"):
            raise SemanticError("initial state must list positive atoms only", h.line, h.column)
        init.add(ground(node))

    goal: list[Literal] = []
    if goal_node is not None:
        for anode, positive in _formula_literals(goal_node):
            goal.append(Literal(ground(anode), positive))

    return Problem(name.value, domain_name.value, tuple(objects), frozenset(init), tuple(goal))


# ---------------------------------------------------------------------------
# Printing


def _typed(params: Iterable[tuple[str, str]]) -> str:
    return " ".join(f"{v} - {t}" for v, t in params)


def _conj(lits: Sequence[Literal], indent: str) -> list[str]:
    if not lits:
        return ["(and)"]
    lines = ["(and"]
    lines += [f"{indent}  {lit}" for lit in lits]
    lines.append(f"{indent})")
    return lines


def print_domain(d: Domain) -> str:
    out = [f"(define (domain {d.name})"]
    if d.requirements:
        out.append(f"  (:requirements {' '.join(d.requirements)})")
    if d.types:
        out.append("  (:types")
        out += [f"    {t} - {p}" for t, p in d.types]
        out.append("  )")
    if d.predicates:
        out.append("  (:predicates")
        for p in d.predicates:
            inner = " ".join(filter(None, (p.name, _typed(p.parameters))))
            out.append(f"    ({inner})")
        out.append("  )")
    for a in d.actions:
        out.append(f"  (:action {a.name}")
        out.append(f"    :parameters ({_typed(a.parameters)})")
        pre = _conj(a.precondition, "    ")
        out.append(f"    :precondition {pre[0]}")
        out += pre[1:]
        eff = _conj(a.effect, "    ")
        out.append(f"    :effect {eff[0]}")
        out += eff[1:]
        out.append("  )")
    out.append(")")
    return "\n".join(out) + "\n"


def print_problem(p: Problem) -> str:
    out = [f"(define (problem {p.name})", f"  (:domain {p.domain_name})"]
    if p.objects:
        out.append("  (:objects")
        out += [f"    {o} - {t}" for o, t in p.objects]
        out.append("  )")
    out.append("  (:init")
    out += [f"    {a}" for a in sorted(p.init)]
    out.append("  )")
    goal = _conj(p.goal, "  ")
    out.append(f"  (:goal {goal[0]}")
    out += goal[1:]
    out[-1] += ")"
    out.append(")")
    return "\n".join(out) + "\n"
