"""LD-resolution over Natlog clauses.

The solver keeps its choice points on an explicit stack of generator frames.
Each frame yields the goal stacks reachable from one goal, one alternative at
a time, and undoes its own bindings before producing the next alternative.
Goal stacks are persistent linked lists ``(goal, base, rest)`` ending in
``None``, where the variables of a clause body goal are read shifted by
``base``, the environment slot of the clause copy it came from.
Nothing recurses in the host language, so derivation depth is bounded by
memory only, and answers are produced lazily: no work is done beyond the
last answer pulled from :meth:`Solver.solve`.
"""

import logging
import operator
from typing import Any, Callable, Iterable, Iterator

from ground_db import FactDb, Indexer, match_facts
from syntax import ACTION, DB, FUN, GEN, PLAIN, YIELD, Clause, Goal, goal_nvars, render_goal
from term import Real, Str, Var, hl, is_constant, map_leaves, term_repr
from unify import deref, relocate, resolve, undo_to, unify, unify_head
from utils import NatlogError


class EngineError(NatlogError):
    """A goal could not be executed; ``goal`` is its rendered text."""

    def __init__(self, message: str, goal: str | None = None):
        super().__init__(message)
        self.message = message
        self.goal = goal

    def __str__(self):
        if self.goal is None:
            return self.message
        return f"{self.message} in goal: {self.goal}"


class UnknownHostName(EngineError):
    """Raised when a prefixed goal names nothing in the host registry."""


class NoDatabase(EngineError):
    """Raised when a ``~`` goal runs without a ground database."""


class NonGroundArgument(EngineError):
    """Raised when a function or generator argument is still a variable."""


class HostCallError(EngineError):
    """Raised when a host action, function or generator fails."""


# ---------------------------------------------------------------------------
# Host values
# ---------------------------------------------------------------------------

def _plain_leaf(x: Any) -> Any:
    kind = type(x)
    if kind is Str:
        return str.__str__(x)
    if kind is Real:
        return float(x)
    return x


def to_host(t: Any, env: list, allow_vars: bool = False) -> Any:
    """Fully dereference ``t`` into plain Python values.

    Symbols and text become ``str``, numbers ``int``/``float`` and tuples
    stay tuples. Unbound variables raise :class:`NonGroundArgument` unless
    ``allow_vars``, in which case they are kept and print as ``_N``.
    """
    if type(t) is tuple:
        # Arguments that are atoms once dereferenced need no copying.
        flat = []
        for x in t:
            x = deref(x, env)
            if type(x) is Var or (type(x) is tuple and x):
                break
            flat.append(_plain_leaf(x))
        else:
            return tuple(flat)

    t = resolve(t, env, {} if allow_vars else None)
    if not allow_vars:
        stack = [t]
        while stack:
            x = stack.pop()
            if type(x) is Var:
                raise NonGroundArgument("argument is not ground")
            if type(x) is tuple:
                stack.extend(x)
    return map_leaves(t, _plain_leaf)


def _term_leaf(v: Any) -> Any:
    if isinstance(v, bool):
        return 'true' if v else 'false'
    if isinstance(v, (Var, Str, Real)):
        return v
    if isinstance(v, int):
        return int(v)
    if isinstance(v, float):
        return Real(v)
    if isinstance(v, str):
        return str(v)
    if v is None or (isinstance(v, (tuple, list)) and not v):
        return ()
    raise TypeError(f"cannot turn {type(v).__name__} value {v!r} into a term")


def from_host(v: Any) -> Any:
    """Turn a Python value returned by host code into a term.

    Lists and tuples become tuples at any depth.
    """
    if not isinstance(v, (tuple, list)) or not v:
        return _term_leaf(v)
    out: list = []
    work: list = [(v, False)]
    while work:
        x, built = work.pop()
        if built:
            items = tuple(out[-x:])
            del out[-x:]
            out.append(items)
        elif isinstance(x, (tuple, list)) and x:
            work.append((len(x), True))
            work.extend((item, False) for item in reversed(x))
        else:
            out.append(_term_leaf(x))
    return out[0]


# ---------------------------------------------------------------------------
# Host registry
# ---------------------------------------------------------------------------

class HostRegistry:
    """Name-keyed tables of the actions, functions and generators goals may call.

    Only registered names can be called; there is no other way into host code.
    """

    def __init__(self):
        self.actions: dict[str, Callable[..., Any]] = {}
        self.functions: dict[str, Callable[..., Any]] = {}
        self.generators: dict[str, Callable[..., Iterable]] = {}

    def _register(self, table, name, fn):
        if fn is None:
            def decorator(f):
                table[name] = f
                return f
            return decorator
        table[name] = fn
        return fn

    def action(self, name: str, fn: Callable | None = None):
        return self._register(self.actions, name, fn)

    def function(self, name: str, fn: Callable | None = None):
        return self._register(self.functions, name, fn)

    def generator(self, name: str, fn: Callable | None = None):
        return self._register(self.generators, name, fn)

    def table_for(self, kind: str) -> dict:
        return {ACTION: self.actions, FUN: self.functions, GEN: self.generators}[kind]

    def copy(self) -> 'HostRegistry':
        other = HostRegistry()
        other.actions.update(self.actions)
        other.functions.update(self.functions)
        other.generators.update(self.generators)
        return other


def _show(v: Any) -> str:
    if isinstance(v, str):
        return v
    return term_repr(v)


def _print(*args):
    print(' '.join(_show(a) for a in args), flush=True)


def _div(a, b):
    if isinstance(a, int) and isinstance(b, int):
        return a // b
    return a / b


def _iter(x):
    return iter(x)


def _list_of(items):
    """``(a b c)`` becomes ``(a (b (c ())))``."""
    result = ()
    for x in reversed(items):
        result = (x, result)
    return result


def standard_registry() -> HostRegistry:
    registry = HostRegistry()
    registry.action('print', _print)

    for name, fn in (
        ('add', operator.add),
        ('sub', operator.sub),
        ('mul', operator.mul),
        ('div', _div),
        ('mod', operator.mod),
        ('abs', abs),
        ('neg', operator.neg),
        ('max', max),
        ('min', min),
        ('len', len),
        ('eq', operator.eq),
        ('ne', operator.ne),
        ('lt', operator.lt),
        ('gt', operator.gt),
        ('le', operator.le),
        ('ge', operator.ge),
        ('list_of', _list_of),
    ):
        registry.function(name, fn)

    registry.generator('range', range)
    registry.generator('iter', _iter)
    return registry


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

_DONE = object()


def _push_body(body: tuple, base: int, rest):
    for goal in reversed(body):
        rest = (goal, base, rest)
    return rest


def _answer_of(term: tuple, env: list) -> Any:
    # A one-word yield like ``^o`` answers with the word itself.
    answer = resolve(term, env, {})
    if type(answer) is tuple and len(answer) == 1:
        return answer[0]
    return answer


class Solver:
    """Runs queries against a program, an optional fact database and host code."""

    def __init__(self, clauses: Iterable[Clause], db: FactDb | None = None,
                 indexer: Indexer | None = None, registry: HostRegistry | None = None,
                 occurs_check: bool = False):
        self.clauses = list(clauses)
        self.db = db
        self.indexer = indexer
        self.registry = registry if registry is not None else standard_registry()
        self.occurs_check = occurs_check
        self._index_clauses()
        logging.debug(
            "Solver ready: %d clauses, %s, occurs check %s.",
            len(self.clauses),
            f"{len(db)} facts" if db is not None else "no database",
            "on" if occurs_check else "off",
        )

    def _index_clauses(self):
        """Group clauses by head arity and leading constant, keeping source order."""
        self._by_arity: dict[int, list[Clause]] = {}
        self._open: dict[int, list[Clause]] = {}
        self._by_key: dict[tuple, list[Clause]] = {}
        self._other: list[Clause] = []
        keys = []
        for clause in self.clauses:
            head = clause.head
            if type(head) is not tuple or not head:
                self._other.append(clause)
                continue
            arity = len(head)
            self._by_arity.setdefault(arity, []).append(clause)
            if is_constant(head[0]):
                keys.append((arity, head[0]))
            else:
                self._open.setdefault(arity, []).append(clause)
        for arity, first in keys:
            key = (arity, type(first), first)
            if key not in self._by_key:
                self._by_key[key] = [
                    c for c in self._by_arity[arity]
                    if not is_constant(c.head[0])
                    or (type(c.head[0]) is type(first) and c.head[0] == first)
                ]

    def _clauses_for(self, term: Any, env: list) -> list[Clause]:
        if self._other or type(term) is not tuple or not term:
            return self.clauses
        first = deref(term[0], env)
        arity = len(term)
        if is_constant(first):
            found = self._by_key.get((arity, type(first), first))
            if found is not None:
                return found
            return self._open.get(arity, ())
        return self._by_arity.get(arity, ())

    def unfold_step(self, term: Any, rest, env: list, trail: list) -> Iterator:
        """Yield the goal stack obtained from each clause whose head unifies with ``term``."""
        mark = len(trail)
        base = len(env)
        occurs_check = self.occurs_check
        for clause in self._clauses_for(term, env):
            nvars = clause.nvars
            if nvars:
                env.extend([None] * nvars)
            if unify_head(clause.head, base, term, env, trail, occurs_check):
                yield _push_body(clause.body, base, rest)
                undo_to(mark, trail, env)
            if nvars:
                del env[base:]

    def _host(self, goal: Goal, env: list):
        name = deref(goal.term[0], env)
        if type(name) is not str:
            raise UnknownHostName(f"host name must be a symbol, got {name!r}",
                                  render_goal(goal))
        fn = self.registry.table_for(goal.kind).get(name)
        if fn is None:
            raise UnknownHostName(f"no host {_KIND_NAMES[goal.kind]} named '{name}'",
                                  render_goal(goal))
        return name, fn

    def _host_args(self, goal: Goal, items, env: list, allow_vars: bool = False):
        try:
            return to_host(tuple(items), env, allow_vars)
        except NonGroundArgument as e:
            raise NonGroundArgument(e.message, render_goal(goal)) from None

    def dispatch(self, goal: Goal, rest, env: list, trail: list) -> Iterator:
        """Run a prefixed goal, yielding the goal stack to continue with per success."""
        kind = goal.kind
        term = goal.term
        if kind == DB:
            if self.db is None:
                raise NoDatabase("no ground database is loaded", render_goal(goal))
            for _ in match_facts(self.db, self.indexer, term, env, trail):
                yield rest
            return
        if kind == YIELD:
            yield rest
            return

        name, fn = self._host(goal, env)
        if kind == ACTION:
            args = self._host_args(goal, term[1:], env, allow_vars=True)
            try:
                fn(*args)
            except Exception as e:
                raise HostCallError(f"action '{name}' failed: {e}", render_goal(goal)) from e
            yield rest
            return

        args = self._host_args(goal, term[1:-1], env)
        result_slot = term[-1]
        if kind == FUN:
            try:
                value = from_host(fn(*args))
            except Exception as e:
                raise HostCallError(f"function '{name}' failed: {e}", render_goal(goal)) from e
            mark = len(trail)
            if unify(result_slot, value, env, trail, self.occurs_check):
                yield rest
                undo_to(mark, trail, env)
            return

        # GEN
        try:
            values = iter(fn(*args))
        except Exception as e:
            raise HostCallError(f"generator '{name}' failed: {e}", render_goal(goal)) from e
        mark = len(trail)
        while True:
            try:
                v = next(values)
                value = from_host(v)
            except StopIteration:
                return
            except Exception as e:
                raise HostCallError(f"generator '{name}' failed: {e}", render_goal(goal)) from e
            if unify(result_slot, value, env, trail, self.occurs_check):
                yield rest
                undo_to(mark, trail, env)

    def solve(self, goals: tuple, nvars: int | None = None) -> Iterator[Any]:
        """Lazily yield the answers to ``goals``.

        An answer is the fully dereferenced goal (a tuple of goals for a
        conjunctive query) each time a derivation succeeds, plus the yielded
        term each time a ``^`` goal is reached. Unbound variables print as
        ``_0``, ``_1``, ...
        """
        goals = tuple(goals)
        if nvars is None:
            nvars = goal_nvars(goals)
        env: list = [None] * nvars
        trail: list = []
        query = goals[0].term if len(goals) == 1 else tuple(g.term for g in goals)

        start = None
        for goal in reversed(goals):
            start = (goal, 0, start)
        stack = [iter((start,))]
        while stack:
            gs = next(stack[-1], _DONE)
            if gs is _DONE:
                stack.pop()
                continue
            while gs is not None and gs[0].kind == YIELD:
                goal, base, gs = gs
                yield _answer_of(relocate(goal.term, base), env)
            if gs is None:
                yield resolve(query, env, {})
                continue
            goal, base, rest = gs
            # Body goals are copied into the environment only once they run.
            term = relocate(goal.term, base)
            if goal.kind == PLAIN:
                stack.append(self.unfold_step(term, rest, env, trail))
            else:
                if base:
                    goal = Goal(goal.kind, term)
                stack.append(self.dispatch(goal, rest, env, trail))


_KIND_NAMES = {ACTION: 'action', FUN: 'function', GEN: 'generator'}


# ---------------------------------------------------------------------------
# Clause algebra
# ---------------------------------------------------------------------------

def compose(c1: Clause, c2: Clause, occurs_check: bool = True) -> Clause | None:
    """Unfold the first body goal of ``c1`` with ``c2``.

    Returns the resolvent with variables renumbered by first occurrence, or
    ``None`` when ``c1`` has no body or the heads do not unify.
    """
    if not c1.body:
        return None
    env: list = [None] * (c1.nvars + c2.nvars)
    trail: list = []
    offset = c1.nvars
    if not unify(c1.body[0].term, relocate(c2.head, offset), env, trail, occurs_check):
        return None
    body = [Goal(g.kind, relocate(g.term, offset)) for g in c2.body]
    body.extend(c1.body[1:])
    free: dict = {}
    head = resolve(c1.head, env, free)
    body = tuple(Goal(g.kind, resolve(g.term, env, free)) for g in body)
    return Clause(head, body, len(free))


def hl_clause(head, body=()) -> Clause:
    """Lift a classic clause ``head :- body`` to a Natlog clause."""
    variables: dict[str, int] = {}
    lifted_head = hl(head, variables)
    lifted_body = tuple(Goal(PLAIN, hl(b, variables)) for b in body)
    return Clause(lifted_head, lifted_body, len(variables))
