"""Natlog terms as immutable nested tuples.

A term is one of:

* ``Var``   a logic variable, identified by its index in a binding environment
* ``str``   a symbolic constant such as ``'cat'``
* ``int``   an integer constant
* ``Real``  a real constant (never equal to an ``int`` of the same value)
* ``Str``   a text constant written with double quotes (never equal to a symbol)
* ``tuple`` a compound term whose items are terms; ``()`` is a constant

Terms print the way Python prints nested tuples, for example
``('a', ('b', ('c', ())))``.
"""

from typing import Any, Iterator

from utils import NatlogError


class NotInImage(NatlogError):
    """Raised when a term has no classic (function symbol + arguments) preimage."""


class Var(int):
    """A variable, standing for slot ``index`` of a binding environment.

    Backed by ``int`` so it can index the environment list directly, but it
    never compares equal to an integer constant.
    """

    __slots__ = ()

    index = property(int.__int__)

    def __eq__(self, other):
        return type(other) is Var and int.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return int.__hash__(self) ^ 0x6B6B6B6B

    def __repr__(self):
        return f"_{int.__int__(self)}"

    __str__ = __repr__

    def __reduce__(self):
        return (Var, (int.__int__(self),))


class Str(str):
    """A text constant, kept apart from the symbol with the same characters."""

    __slots__ = ()

    def __eq__(self, other):
        return type(other) is Str and str.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return str.__hash__(self) ^ 0x5A5A5A5A

    def __repr__(self):
        escaped = str.__str__(self).replace('\\', '\\\\').replace('"', '\\"')
        return f'"{escaped}"'


class Real(float):
    """A real constant, kept apart from the integer with the same value."""

    __slots__ = ()

    def __eq__(self, other):
        return type(other) is Real and float.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return float.__hash__(self) ^ 0x3C3C3C3C

    def __repr__(self):
        return float.__repr__(self)


# Kind ranks used for deterministic ordering of constants.
_KIND_RANK = {str: 0, int: 1, Real: 2, Str: 3, tuple: 4}


def is_var(t: Any) -> bool:
    return type(t) is Var


def is_constant(t: Any) -> bool:
    """Return ``True`` for symbols, numbers, text and the empty tuple."""
    if type(t) is tuple:
        return not t
    return type(t) in _KIND_RANK


def constant_sort_key(c: Any) -> tuple:
    """Order constants by kind (symbol, int, real, text, ``()``), then payload."""
    rank = _KIND_RANK[type(c)]
    if rank == 4:
        return (rank, 0)
    if rank == 3:
        return (rank, str.__str__(c))
    if rank == 2:
        return (rank, float(c))
    return (rank, c)


def is_ground(t: Any) -> bool:
    stack = [t]
    while stack:
        x = stack.pop()
        if type(x) is Var:
            return False
        if type(x) is tuple:
            stack.extend(x)
    return True


def variables_of(t: Any) -> set[int]:
    """Return the indices of all variables occurring in ``t``."""
    found = set()
    stack = [t]
    while stack:
        x = stack.pop()
        if type(x) is Var:
            found.add(x.index)
        elif type(x) is tuple:
            stack.extend(x)
    return found


def const_of(t: Any) -> set:
    """Return the set of constants occurring anywhere in ``t``."""
    constants = set()
    stack = [t]
    while stack:
        x = stack.pop()
        if type(x) is tuple:
            if x:
                stack.extend(x)
            else:
                constants.add(x)
        elif type(x) is not Var:
            constants.add(x)
    return constants


def iter_paths(t: Any, max_depth: int | None = None) -> Iterator[tuple[tuple[int, ...], Any]]:
    """Yield ``(path, constant)`` for every constant occurrence in ``t``.

    Occurrences deeper than ``max_depth`` child steps are skipped.
    """
    stack = [((), t)]
    while stack:
        path, x = stack.pop()
        if type(x) is Var:
            continue
        if type(x) is tuple and x:
            if max_depth is not None and len(path) >= max_depth:
                continue
            for i in range(len(x) - 1, -1, -1):
                stack.append((path + (i,), x[i]))
        else:
            yield path, x


def paths_of(t: Any) -> set[tuple[tuple[int, ...], Any]]:
    """Return the set of paths from the root of ``t`` to each of its constants.

    >>> sorted(paths_of(('f', 'a', ('g', 'b'))))
    [((0,), 'f'), ((1,), 'a'), ((2, 0), 'g'), ((2, 1), 'b')]
    """
    return set(iter_paths(t))


def navigate(t: Any, path: tuple[int, ...]) -> Any:
    for i in path:
        t = t[i]
    return t


def map_leaves(t: Any, fn) -> Any:
    """Rebuild ``t`` with every leaf replaced by ``fn(leaf)``.

    Leaves are variables, constants and ``()``. Works at any depth: long
    lists are nested pairs, so depth grows with list length.
    """
    if type(t) is not tuple or not t:
        return fn(t)
    out: list = []
    work: list = [(t, False)]
    while work:
        x, built = work.pop()
        if built:
            items = tuple(out[-x:])
            del out[-x:]
            out.append(items)
        elif type(x) is tuple and x:
            work.append((len(x), True))
            work.extend((item, False) for item in reversed(x))
        else:
            out.append(fn(x))
    return out[0]


def term_repr(t: Any) -> str:
    """Return ``repr(t)`` for a term or host value, at any depth.

    The text is the one Python prints for nested tuples, which refuses to go
    deeper than the interpreter's recursion limit.
    """
    if type(t) is not tuple:
        return repr(t)
    parts = []
    work: list = [(False, t)]
    while work:
        literal, x = work.pop()
        if literal:
            parts.append(x)
        elif type(x) is tuple:
            parts.append('(')
            work.append((True, ',)' if len(x) == 1 else ')'))
            for i in range(len(x) - 1, -1, -1):
                work.append((False, x[i]))
                if i:
                    work.append((True, ', '))
        else:
            parts.append(repr(x))
    return ''.join(parts)


# Skeleton nodes: constants become FILLED, variables WILDCARD, tuples stay tuples.
FILLED = 'o'
WILDCARD = '*'


def _skeleton_leaf(x: Any) -> str:
    return WILDCARD if type(x) is Var else FILLED


def skeleton_of(t: Any) -> Any:
    """Replace constants by ``'o'`` and variables by ``'*'``, keeping tuple shape."""
    return map_leaves(t, _skeleton_leaf)


def render_skeleton(s: Any) -> str:
    """Render a skeleton compactly, as in ``(oo(o*o))``."""
    parts = []
    work = [s]
    while work:
        x = work.pop()
        if type(x) is tuple:
            parts.append('(')
            work.append(')')
            work.extend(reversed(x))
        else:
            parts.append(x)
    return ''.join(parts)


def skeleton_matches(query_skel: Any, fact_skel: Any) -> bool:
    """Return ``True`` unless the shapes prove the query cannot unify with the fact.

    Each wildcard in ``query_skel`` absorbs one complete subtree of ``fact_skel``.
    """
    stack = [(query_skel, fact_skel)]
    while stack:
        q, f = stack.pop()
        if q == WILDCARD:
            continue
        if type(q) is tuple:
            if type(f) is not tuple or len(q) != len(f):
                return False
            stack.extend(zip(q, f))
        elif f != FILLED:
            return False
    return True


# ---------------------------------------------------------------------------
# Classic terms: function symbol applied to arguments.
# ---------------------------------------------------------------------------

class ClassicTerm:
    __slots__ = ()

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other):
        return type(other) is type(self) and other._key() == self._key()

    def __hash__(self):
        return hash((type(self), self._key()))


class Atom(ClassicTerm):
    __slots__ = ('name',)

    def __init__(self, name):
        self.name = name

    def _key(self):
        return self.name

    def __repr__(self):
        return str(self.name)


class ClassicVar(ClassicTerm):
    __slots__ = ('name',)

    def __init__(self, name: str):
        self.name = name

    def _key(self):
        return self.name

    def __repr__(self):
        return self.name


class Compound(ClassicTerm):
    __slots__ = ('functor', 'args')

    def __init__(self, functor, args):
        args = tuple(args)
        if not args:
            raise ValueError("a compound term needs at least one argument")
        self.functor = functor
        self.args = args

    def _key(self):
        return (self.functor, self.args)

    def __repr__(self):
        return f"{self.functor}({', '.join(map(repr, self.args))})"


def hl(c: ClassicTerm, variables: dict[str, int] | None = None) -> Any:
    """Lift a classic term to its nested-tuple form.

    ``f(A, g(a, B), B)`` becomes ``('f', A, ('g', 'a', B), B)``; the tuple
    itself plays the role of the implicit ``$`` wrapper. Variable names are
    numbered by first occurrence through ``variables``, which callers can
    share across the terms of one clause.
    """
    if variables is None:
        variables = {}
    if type(c) is ClassicVar:
        index = variables.get(c.name)
        if index is None:
            index = variables[c.name] = len(variables)
        return Var(index)
    if type(c) is Atom:
        return c.name
    if type(c) is Compound:
        return (c.functor,) + tuple(hl(a, variables) for a in c.args)
    raise TypeError(f"not a classic term: {c!r}")


def hl_inv(t: Any, names: list[str] | None = None) -> ClassicTerm:
    """Left inverse of :func:`hl`; ``names[i]`` names variable ``i``."""
    if type(t) is Var:
        name = names[t.index] if names is not None else f"V{t.index}"
        return ClassicVar(name)
    if type(t) is tuple:
        if len(t) < 2 or type(t[0]) is not str:
            raise NotInImage(f"{t!r} has no classic preimage")
        return Compound(t[0], [hl_inv(x, names) for x in t[1:]])
    return Atom(t)
