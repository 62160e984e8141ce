import sys; import os; from pathlib import Path; sys.path.insert(0, os.fspath(Path(__file__).resolve().parent.parent))

import itertools
import random
import time

import pytest

from engine import (
    HostCallError,
    HostRegistry,
    NoDatabase,
    NonGroundArgument,
    Solver,
    UnknownHostName,
    compose,
    from_host,
    hl_clause,
    standard_registry,
    to_host,
)
from ground_db import FactDb, facts_from_tsv
from natlog import Natlog
from neural_index import TrainConfig
from syntax import ACTION, DB, FUN, PLAIN, Clause, Goal, parse_program, parse_query, render_clause
from term import Atom, ClassicVar, Compound, Real, Str, Var, hl
from unify import relocate

NATPROGS = Path(__file__).resolve().parent.parent / 'natprogs'


def program(name):
    return parse_program((NATPROGS / name).read_text(encoding='utf-8'))


def answers(clauses, query, **kwargs):
    return list(Solver(clauses, **kwargs).solve(parse_query(query)))


def nat_list(*items):
    result = ()
    for x in reversed(items):
        result = (x, result)
    return result


# ---------------------------------------------------------------------------
# Bundled programs
# ---------------------------------------------------------------------------

def test_tc_answers_in_depth_first_order():
    found = answers(program('tc.nat'), "tc Who is animal ?")
    assert found[0] == ('tc', 'cat', 'is', 'animal')
    assert [a[1] for a in found] == [
        'cat', 'tiger', 'mouse', 'feline', 'rodent', 'snake', 'mammal', 'reptile',
    ]


def test_perm_enumerates_permutations_in_order():
    found = answers(program('perm.nat'), "perm (a (b (c ()))) P?")
    assert [a[2] for a in found] == [
        nat_list('a', 'b', 'c'),
        nat_list('b', 'a', 'c'),
        nat_list('b', 'c', 'a'),
        nat_list('a', 'c', 'b'),
        nat_list('c', 'a', 'b'),
        nat_list('c', 'b', 'a'),
    ]


@pytest.mark.parametrize('n, count', [(1, 1), (4, 24), (5, 120), (6, 720)])
def test_perm_counts_are_factorials(n, count):
    solver = Solver(program('perm.nat'))
    goal = Goal(PLAIN, ('perm', nat_list(*range(n)), Var(0)))
    assert sum(1 for _ in solver.solve((goal,))) == count


def test_worm_stream_can_be_abandoned_and_rerun():
    solver = Solver(program('worm.nat'))
    goals = parse_query("worm ?")
    first = list(itertools.islice(solver.solve(goals), 43))
    assert first == ['o'] * 43
    again = list(itertools.islice(solver.solve(goals), 43))
    assert again == first


def test_generators_filter_and_range():
    found = answers(program('gen.nat'), "goal X ?")
    assert [a[1] for a in found] == ['l', 'l', 'o', 1000, 1001, 1002, 1003, 1004]


def test_print_action_runs_once_per_visit(capsys):
    found = answers(program('gen.nat'), "show X ?")
    assert found == [('show', 2)]
    assert capsys.readouterr().out == "printing b = 1\nprinting b = 2\n"


def queens_brute_force(n):
    return sum(
        1 for cols in itertools.permutations(range(n))
        if all(abs(cols[i] - cols[j]) != j - i for i in range(n) for j in range(i + 1, n))
    )


@pytest.mark.parametrize('n', [4, 5, 6])
def test_queens_agree_with_brute_force(n):
    solver = Solver(program('queens.nat'))
    found = list(solver.solve(parse_query(f"queens {n} Qs ?")))
    assert len(found) == queens_brute_force(n)
    assert len(set(found)) == len(found)


def from_nat_list(t):
    items = []
    while t:
        items.append(t[0])
        t = t[1]
    return items


def test_queens_answers_are_placements():
    assert queens_brute_force(6) == 4
    found = answers(program('queens.nat'), "queens 6 Qs ?")
    assert len(found) == 4
    for _, _, qs in found:
        rows = from_nat_list(qs)
        assert sorted(rows) == [1, 2, 3, 4, 5, 6]
        assert all(abs(rows[i] - rows[j]) != j - i for i in range(6) for j in range(i + 1, 6))


def test_queens_ten_all_solutions():
    solver = Solver(program('queens.nat'))
    start = time.perf_counter()
    count = sum(1 for _ in solver.solve(parse_query("queens 10 Qs ?")))
    elapsed = time.perf_counter() - start
    assert count == 724
    assert elapsed < 5.0


def test_right_recursion_runs_without_host_recursion():
    depth = 100_000
    clauses = parse_program("walk (). walk (X Xs) : walk Xs.")
    big = ()
    for i in range(depth):
        big = (i, big)
    solver = Solver(clauses)
    assert sum(1 for _ in solver.solve((Goal(PLAIN, ('walk', big)),))) == 1


def test_host_calls_on_long_lists(capsys):
    depth = 100_000
    big = nat_list(*range(depth))
    solver = Solver([])

    found = list(solver.solve((Goal(ACTION, ('print', big)),)))
    assert len(found) == 1
    out = capsys.readouterr().out
    assert out.startswith("(0, (1, (2, ") and out.endswith("()" + ")" * depth + "\n")

    [answer] = solver.solve((Goal(FUN, ('len', big, Var(0))),))
    assert answer[2] == 2

    [answer] = solver.solve((Goal(FUN, ('list_of', tuple(range(depth)), Var(0))),))
    assert from_nat_list(answer[2]) == list(range(depth))


def test_db_goal_on_long_fact_with_prefilter():
    big = nat_list(*range(100_000))
    db = FactDb('const', prefilter=True)
    db.add_facts([('p', big), ('p', ('x', ()))])
    goal = Goal(DB, ('p', (0, (1, Var(0)))))
    [answer] = Solver([], db=db).solve((goal,))
    assert answer[1][0] == 0
    assert from_nat_list(answer[1])[-1] == 99_999


def test_countdown_with_host_arithmetic():
    clauses = parse_program("down 0. down N : `gt N 0 true, `sub N 1 M, down M.")
    assert answers(clauses, "down 20000 ?") == [('down', 20000)]


# ---------------------------------------------------------------------------
# Goals and dispatch
# ---------------------------------------------------------------------------

def test_residual_variables_are_renumbered():
    clauses = parse_program("same X X.")
    assert answers(clauses, "same A B ?") == [('same', Var(0), Var(0))]
    assert answers(clauses, "same (f A) (f B) ?") == [('same', ('f', Var(0)), ('f', Var(0)))]


def test_conjunctive_query_answers_with_every_goal():
    clauses = program('tc.nat')
    found = answers(clauses, "cat is X, X is Y ?")
    assert found == [(('cat', 'is', 'feline'), ('feline', 'is', 'mammal'))]


def test_yield_goal_in_query():
    found = answers(parse_program("n 1. n 2."), "n X, ^ got X ?")
    assert found == [
        ('got', 1), (('n', 1), ('got', 1)),
        ('got', 2), (('n', 2), ('got', 2)),
    ]


def test_clause_index_keeps_source_order():
    clauses = parse_program("p a 1. p X 2. p b 3. p a 4. p (a) 5.")
    assert [a[2] for a in answers(clauses, "p a N ?")] == [1, 2, 4]
    assert [a[2] for a in answers(clauses, "p Y N ?")] == [1, 2, 3, 4, 5]
    assert [a[2] for a in answers(clauses, "p c N ?")] == [2]
    assert answers(clauses, "p a b c ?") == []


def test_variable_first_heads_are_tried():
    clauses = parse_program("Who likes pizza. bob likes X. alice hates Y.")
    assert answers(clauses, "bob likes W ?") == [('bob', 'likes', 'pizza'), ('bob', 'likes', Var(0))]


def test_constant_kinds_do_not_match_across_kinds():
    clauses = parse_program("""k 1. k '1'. k "1". k 1.0.""")
    assert answers(clauses, "k 1 ?") == [('k', 1)]
    assert answers(clauses, "k '1' ?") == [('k', '1')]
    assert answers(clauses, 'k "1" ?') == [('k', Str('1'))]
    assert answers(clauses, "k X ?") == [('k', 1), ('k', '1'), ('k', Str('1')), ('k', Real(1.0))]


def test_unfold_step_examples():
    solver = Solver(program('perm.nat'))
    env, trail = [None], []
    stacks = list(solver.unfold_step(('perm', (), Var(0)), None, env, trail))
    assert stacks == [None]
    assert env == [None] and trail == []
    assert list(solver.unfold_step(('nothing', 'here'), None, env, trail)) == []


def test_function_results_unify_with_last_argument():
    assert answers([], "`add 2 3 R ?") == [('add', 2, 3, 5)]
    assert answers([], "`add 2 3 6 ?") == []
    assert answers([], "`div 7 2 R ?")[0][3] == 3
    assert answers([], "`div 7.0 2 R ?")[0][3] == Real(3.5)
    assert answers([], "`lt 1 2 R ?")[0][3] == 'true'
    assert answers([], "`eq a b R ?")[0][3] == 'false'
    assert answers([], "`list_of (a b) R ?")[0][2] == nat_list('a', 'b')


def test_iter_generator_yields_characters():
    assert [a[2] for a in answers([], "``iter hello X ?")] == ['h', 'e', 'l', 'l', 'o']
    assert [a[2] for a in answers([], "``iter (a (b)) X ?")] == ['a', ('b',)]


def test_print_with_unbound_variable(capsys):
    answers([], "#print hello X ?")
    assert capsys.readouterr().out == "hello _0\n"


def test_unknown_host_name():
    with pytest.raises(UnknownHostName, match="no host function named 'nope'") as excinfo:
        answers([], "`nope 1 X ?")
    assert excinfo.value.goal == "`nope 1 _0"


def test_db_goal_without_database():
    with pytest.raises(NoDatabase):
        answers([], "~ p X ?")


def test_non_ground_function_argument():
    with pytest.raises(NonGroundArgument, match="in goal: `add _0 1 _1"):
        answers([], "`add X 1 Y ?")


def test_failing_host_code_is_reported():
    with pytest.raises(HostCallError, match="function 'div' failed"):
        answers([], "`div 1 0 X ?")


def test_answers_before_an_error_are_delivered():
    stream = Solver(parse_program("p 1. p 0."), registry=standard_registry()).solve(
        parse_query("p X, `div 6 X Y ?")
    )
    assert next(stream) == (('p', 1), ('div', 6, 1, 6))
    with pytest.raises(HostCallError):
        next(stream)


def test_custom_registry_entries():
    registry = HostRegistry()

    @registry.generator('evens')
    def evens(limit):
        return range(0, limit, 2)

    registry.function('shout', lambda s: s.upper())
    assert answers([], "``evens 5 X ?", registry=registry) == [('evens', 5, 0), ('evens', 5, 2), ('evens', 5, 4)]
    assert answers([], "`shout hi Y ?", registry=registry) == [('shout', 'hi', 'HI')]
    with pytest.raises(UnknownHostName):
        answers([], "`add 1 2 X ?", registry=registry)
    assert 'add' in standard_registry().copy().functions


def test_to_host_and_from_host():
    env = [('b', ()), None]
    assert to_host(('a', Var(0)), env) == ('a', ('b', ()))
    assert to_host((Str('t'), Real(1.5), 1000), env) == ('t', 1.5, 1000)
    assert type(to_host(Str('t'), env)) is str
    with pytest.raises(NonGroundArgument):
        to_host(('a', Var(1)), env)
    assert from_host(True) == 'true'
    assert from_host([1, [2.5, None]]) == (1, (Real(2.5), ()))
    assert from_host(('x',)) == ('x',)
    with pytest.raises(TypeError):
        from_host(object())


# ---------------------------------------------------------------------------
# Ground database goals
# ---------------------------------------------------------------------------

def test_db_goals_use_the_database():
    db = FactDb()
    db.add_facts([('cat', 'is', 'feline'), ('mouse', 'is', 'rodent')])
    clauses = parse_program("pet X : ~ X is Y.")
    assert answers(clauses, "pet P ?", db=db) == [('pet', 'cat'), ('pet', 'mouse')]


def elements_as_clauses():
    text = (NATPROGS / 'elements.nat').read_text(encoding='utf-8').replace('~ ', '')
    facts = facts_from_tsv((NATPROGS / 'elements.tsv').read_text(encoding='utf-8'))
    return parse_program(text) + [Clause(fact, (), 0) for fact in facts]


@pytest.mark.parametrize('indexer, prefilter', [('const', False), ('path', False), ('const', True)])
def test_db_answers_match_facts_as_clauses(indexer, prefilter):
    expected = answers(elements_as_clauses(), "gases Num El ?")
    natlog = Natlog(file_name=NATPROGS / 'elements.nat', db_name=NATPROGS / 'elements.tsv',
                    indexer=indexer, skeleton_prefilter=prefilter)
    found = list(natlog.solve("gases Num El ?"))
    assert set(found) == set(expected)
    assert found[0] == ('gases', '1', 'H')
    assert found[-1] == ('gases', '86', 'Rn')
    assert natlog.count("an_el Num El ?") == 1


def test_untrained_neural_db_answers_are_sound():
    expected = set(answers(elements_as_clauses(), "gases Num El ?"))
    natlog = Natlog.neural(file_name=NATPROGS / 'elements.nat', db_name=NATPROGS / 'elements.tsv',
                           train_config=TrainConfig(epochs=0))
    assert set(natlog.solve("gases Num El ?")) <= expected


# ---------------------------------------------------------------------------
# Comparison with a recursive resolution procedure
# ---------------------------------------------------------------------------

def walk(t, subst):
    while type(t) is Var and t.index in subst:
        t = subst[t.index]
    return t


def substitute(t, subst):
    t = walk(t, subst)
    if type(t) is tuple:
        return tuple(substitute(x, subst) for x in t)
    return t


def subst_unify(a, b, subst):
    subst = dict(subst)
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        x, y = walk(x, subst), walk(y, subst)
        if type(x) is Var and type(y) is Var and x.index == y.index:
            continue
        if type(x) is Var:
            subst[x.index] = y
        elif type(y) is Var:
            subst[y.index] = x
        elif type(x) is not type(y):
            return None
        elif type(x) is tuple:
            if len(x) != len(y):
                return None
            stack.extend(zip(x, y))
        elif x != y:
            return None
    return subst


def recursive_solve(clauses, goals, subst, counter):
    if not goals:
        yield subst
        return
    goal, rest = goals[0], goals[1:]
    for clause in clauses:
        offset = counter[0]
        counter[0] += clause.nvars
        found = subst_unify(goal, relocate(clause.head, offset), subst)
        if found is not None:
            body = [relocate(g.term, offset) for g in clause.body]
            yield from recursive_solve(clauses, body + rest, found, counter)


def normalize(t, names=None):
    names = {} if names is None else names
    if type(t) is Var:
        return Var(names.setdefault(t.index, len(names)))
    if type(t) is tuple:
        return tuple(normalize(x, names) for x in t)
    return t


APPEND = """
app () Ys Ys.
app (X Xs) Ys (X Zs) : app Xs Ys Zs.
mem X (X _).
mem X (_ Xs) : mem X Xs.
nrev () ().
nrev (X Xs) R : nrev Xs Ys, app Ys (X ()) R.
"""


@pytest.mark.parametrize('source, query', [
    ('tc.nat', "tc Who is animal ?"),
    ('tc.nat', "tc cat Rel What ?"),
    ('perm.nat', "perm (a (b (c (d ())))) P ?"),
    ('perm.nat', "ins x L (a (x (b ()))) ?"),
    (APPEND, "app A B (a (b (c ()))) ?"),
    (APPEND, "mem X (a (b (c ()))) ?"),
    (APPEND, "nrev (a (b (c ()))) R ?"),
    (APPEND, "app (a (b ())) Ys Zs ?"),
])
def test_solver_agrees_with_recursive_resolution(source, query):
    clauses = program(source) if source.endswith('.nat') else parse_program(source)
    goals = parse_query(query)
    nvars = max((v.index + 1 for g in goals for v in _vars(g.term)), default=0)
    query_term = goals[0].term
    expected = [
        normalize(substitute(query_term, s))
        for s in recursive_solve(clauses, [query_term], {}, [nvars])
    ]
    assert list(Solver(clauses).solve(goals)) == expected
    assert expected


def _vars(t):
    if type(t) is Var:
        yield t
    elif type(t) is tuple:
        for x in t:
            yield from _vars(x)


# ---------------------------------------------------------------------------
# Clause composition and lifting
# ---------------------------------------------------------------------------

def test_compose_example():
    [c1] = parse_program("gp X Z : par X Y, par Y Z.")
    [c2] = parse_program("par tom B : male tom.")
    resolvent = compose(c1, c2)
    assert render_clause(resolvent) == "gp tom _0 : male tom, par _1 _0."
    assert compose(c2, c1) is None
    assert compose(Clause(('f',), (), 0), c1) is None


def test_hl_clause_numbers_variables_across_the_clause():
    head = Compound('gp', [ClassicVar('X'), ClassicVar('Z')])
    body = [Compound('par', [ClassicVar('X'), ClassicVar('Y')]), Compound('par', [ClassicVar('Y'), ClassicVar('Z')])]
    assert hl_clause(head, body) == Clause(
        ('gp', Var(0), Var(1)),
        (Goal(PLAIN, ('par', Var(0), Var(2))), Goal(PLAIN, ('par', Var(2), Var(1)))),
        3,
    )


def classic_walk(t, subst):
    while type(t) is ClassicVar and t.name in subst:
        t = subst[t.name]
    return t


def classic_apply(t, subst):
    t = classic_walk(t, subst)
    if type(t) is Compound:
        return Compound(t.functor, [classic_apply(a, subst) for a in t.args])
    return t


def classic_occurs(name, t, subst):
    t = classic_walk(t, subst)
    if type(t) is ClassicVar:
        return t.name == name
    if type(t) is Compound:
        return any(classic_occurs(name, a, subst) for a in t.args)
    return False


def classic_unify(a, b):
    subst = {}
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        x, y = classic_walk(x, subst), classic_walk(y, subst)
        if x == y:
            continue
        if type(x) is ClassicVar or type(y) is ClassicVar:
            v, t = (x, y) if type(x) is ClassicVar else (y, x)
            if classic_occurs(v.name, t, subst):
                return None
            subst[v.name] = t
        elif type(x) is Compound and type(y) is Compound:
            if x.functor != y.functor or len(x.args) != len(y.args):
                return None
            stack.extend(zip(x.args, y.args))
        else:
            return None
    return subst


def classic_rename(t, suffix):
    if type(t) is ClassicVar:
        return ClassicVar(t.name + suffix)
    if type(t) is Compound:
        return Compound(t.functor, [classic_rename(a, suffix) for a in t.args])
    return t


def classic_compose(c1, c2):
    """Resolve the first body atom of ``c1`` with a renamed copy of ``c2``."""
    head1, body1 = c1
    head2, body2 = classic_rename(c2[0], "'"), [classic_rename(b, "'") for b in c2[1]]
    subst = classic_unify(body1[0], head2)
    if subst is None:
        return None
    body = [classic_apply(b, subst) for b in body2 + body1[1:]]
    return classic_apply(head1, subst), body


PREDICATES = ['p', 'q']
FUNCTORS = ['f', 'g']
CONSTANTS = ['a', 'b']
NAMES = ['X', 'Y', 'Z']


def random_arg(rng, depth):
    roll = rng.random()
    if roll < 0.4:
        return ClassicVar(rng.choice(NAMES))
    if roll < 0.7 or depth == 0:
        return Atom(rng.choice(CONSTANTS))
    return Compound(rng.choice(FUNCTORS), [random_arg(rng, depth - 1) for _ in range(rng.randint(1, 2))])


def random_atom(rng):
    return Compound(rng.choice(PREDICATES), [random_arg(rng, 2) for _ in range(rng.randint(1, 2))])


def random_clause(rng, min_body):
    return random_atom(rng), [random_atom(rng) for _ in range(rng.randint(min_body, 2))]


def test_lifting_commutes_with_composition():
    rng = random.Random(31)
    composed = 0
    for _ in range(2000):
        c1 = random_clause(rng, 1)
        c2 = random_clause(rng, 0)
        classic = classic_compose(c1, c2)
        lifted = compose(hl_clause(*c1), hl_clause(*c2))
        if classic is None:
            assert lifted is None
        else:
            composed += 1
            assert lifted == hl_clause(*classic)
    assert composed >= 100


def test_lifting_nested_compound_terms():
    c = Compound('f', [ClassicVar('A'), Compound('g', [Atom('a'), ClassicVar('B')])])
    assert hl(c) == ('f', Var(0), ('g', 'a', Var(1)))
