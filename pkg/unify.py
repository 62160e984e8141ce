"""Structure-sharing unification.

An environment is a plain list whose slot ``i`` holds the binding of
``Var(i)``, or ``None`` while the variable is unbound. Every binding pushes
the variable index on a trail (another list) so that :func:`undo_to` can
restore any earlier state. Nothing here recurses, so terms may be as deep
as memory allows.
"""

from typing import Any

from term import Var, map_leaves


def deref(t: Any, env: list) -> Any:
    """Follow variable bindings until an unbound variable or a non-variable."""
    while type(t) is Var:
        bound = env[t]
        if bound is None:
            return t
        t = bound
    return t


def undo_to(mark: int, trail: list, env: list) -> None:
    """Unbind every variable bound after trail height ``mark``."""
    while len(trail) > mark:
        env[trail.pop()] = None


def occurs(index: int, t: Any, env: list) -> bool:
    """Return ``True`` if ``Var(index)`` occurs in ``t`` once bindings are followed."""
    stack = [t]
    while stack:
        x = deref(stack.pop(), env)
        if type(x) is Var:
            if x.index == index:
                return True
        elif type(x) is tuple:
            stack.extend(x)
    return False


def unify(t1: Any, t2: Any, env: list, trail: list, occurs_check: bool = False) -> bool:
    """Unify ``t1`` with ``t2`` in ``env``, trailing every binding.

    On failure the environment and trail are restored to their state at entry.
    Two unbound variables are joined by binding the one coming from ``t1``.
    """
    mark = len(trail)
    stack = [(t1, t2)]
    while stack:
        a, b = stack.pop()
        a = deref(a, env)
        b = deref(b, env)
        if type(a) is Var:
            if a == b:
                continue
            if occurs_check and type(b) is tuple and occurs(a.index, b, env):
                break
            env[a] = b
            trail.append(a.index)
        elif type(b) is Var:
            if occurs_check and type(a) is tuple and occurs(b.index, a, env):
                break
            env[b] = a
            trail.append(b.index)
        elif type(a) is not type(b):
            break
        elif type(a) is tuple:
            if len(a) != len(b):
                break
            stack.extend(zip(reversed(a), reversed(b)))
        elif a != b:
            break
    else:
        return True
    undo_to(mark, trail, env)
    return False


def unify_head(head: Any, base: int, goal: Any, env: list, trail: list,
               occurs_check: bool = False) -> bool:
    """Unify a clause head, its variables shifted by ``base``, with ``goal``.

    Binds exactly as ``unify(relocate(head, base), goal, ...)`` would, but
    copies only the head subterms that end up bound to goal variables.
    """
    mark = len(trail)
    stack = [(head, goal)]
    while stack:
        h, g = stack.pop()
        while type(g) is Var:
            bound = env[g]
            if bound is None:
                break
            g = bound
        if type(h) is Var:
            slot = h + base
            bound = env[slot]
            if bound is not None:
                if unify(bound, g, env, trail, occurs_check):
                    continue
                break
            if type(g) is Var and g.index == slot:
                continue
            if occurs_check and type(g) is tuple and occurs(slot, g, env):
                break
            env[slot] = g
            trail.append(slot)
        elif type(g) is Var:
            value = relocate(h, base)
            if occurs_check and type(value) is tuple and occurs(g.index, value, env):
                break
            env[g] = value
            trail.append(g.index)
        elif type(h) is not type(g):
            break
        elif type(h) is tuple:
            if len(h) != len(g):
                break
            stack.extend(zip(reversed(h), reversed(g)))
        elif h != g:
            break
    else:
        return True
    undo_to(mark, trail, env)
    return False


def ground_unify(query: Any, fact: Any, env: list, trail: list) -> bool:
    """Unify ``query`` with the ground term ``fact``.

    Only variables of ``query`` can get bound and no occurs-check is needed,
    since ``fact`` has no variables. Failure restores ``env`` and ``trail``.
    """
    mark = len(trail)
    stack = [(query, fact)]
    while stack:
        q, f = stack.pop()
        q = deref(q, env)
        if type(q) is Var:
            env[q] = f
            trail.append(q.index)
        elif type(q) is not type(f):
            break
        elif type(q) is tuple:
            if len(q) != len(f):
                break
            stack.extend(zip(reversed(q), reversed(f)))
        elif q != f:
            break
    else:
        return True
    undo_to(mark, trail, env)
    return False


def relocate(t: Any, offset: int) -> Any:
    """Shift every variable index of ``t`` by ``offset``."""
    kind = type(t)
    if kind is Var:
        return Var(t + offset)
    if kind is not tuple or not offset:
        return t
    items = []
    for x in t:
        kind = type(x)
        if kind is Var:
            items.append(Var(x + offset))
        elif kind is tuple and x:
            # nested: rebuild the whole term without recursion
            return map_leaves(t, lambda y: Var(y + offset) if type(y) is Var else y)
        else:
            items.append(x)
    return tuple(items)


def resolve(t: Any, env: list, free: dict | None = None) -> Any:
    """Return a copy of ``t`` with all bindings substituted, at any depth.

    When ``free`` is a dict, unbound variables are renamed ``_0``, ``_1``, ...
    by first occurrence, sharing the numbering across calls with the same dict.
    """
    out = []
    work = [(t, False)]
    while work:
        x, build = work.pop()
        if build:
            if x:
                items = tuple(out[-x:])
                del out[-x:]
            else:
                items = ()
            out.append(items)
            continue
        x = deref(x, env)
        if type(x) is Var:
            if free is not None:
                renamed = free.get(x.index)
                if renamed is None:
                    renamed = free[x.index] = Var(len(free))
                x = renamed
            out.append(x)
        elif type(x) is tuple and x:
            work.append((len(x), True))
            work.extend((item, False) for item in reversed(x))
        else:
            out.append(x)
    return out[0]
