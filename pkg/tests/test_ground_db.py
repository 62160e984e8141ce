import sys; import os; from pathlib import Path; sys.path.insert(0, os.fspath(Path(__file__).resolve().parent.parent))

import random

import pytest

from ground_db import (
    PATH_DEPTH_LIMIT,
    FactDb,
    FormatError,
    NonGroundFact,
    detect_format,
    facts_from_csv,
    facts_from_json,
    facts_from_nat,
    facts_from_tsv,
    load_facts,
    match_facts,
)
from term import Str, Var
from unify import ground_unify, resolve

NATPROGS = Path(__file__).resolve().parent.parent / 'natprogs'

X, Y = Var(0), Var(1)

ANIMALS = [
    ('cat', 'is', 'feline'),
    ('tiger', 'is', 'feline'),
    ('mouse', 'is', 'rodent'),
    ('feline', 'is', 'mammal'),
    ('rodent', 'is', 'mammal'),
]


@pytest.fixture
def animals():
    db = FactDb()
    db.add_facts(ANIMALS)
    return db


def test_add_fact_assigns_ids_and_indexes_constants(animals):
    assert len(animals) == 5
    assert animals.add_fact(('snake', 'is', 'reptile')) == 5
    assert animals.const_index['is'] == set(range(6))
    assert animals.const_index['feline'] == {0, 1, 3}


def test_add_fact_rejects_variables(animals):
    with pytest.raises(NonGroundFact):
        animals.add_fact(('x', Var(0)))
    assert len(animals) == 5


def test_ground_match_of_intersects_constant_sets(animals):
    assert animals.ground_match_of(('cat', 'is', X)) == [0]
    assert animals.ground_match_of((X, 'is', 'feline')) == [0, 1, 3]
    assert animals.ground_match_of((X, Y)) == [0, 1, 2, 3, 4]
    assert animals.ground_match_of(('dog', 'is', X)) == []


def test_ground_match_of_is_position_blind(animals):
    # 'feline' sits in two different places; constants alone keep both.
    assert animals.ground_match_of(('feline', 'is', X)) == [0, 1, 3]
    assert animals.ground_match_of_paths(('feline', 'is', X)) == [3]


def test_path_indexing_database_uses_paths():
    db = FactDb(indexing='path')
    db.add_facts(ANIMALS)
    assert db.candidates((X, 'is', 'feline')) == [0, 1]
    # Paths carry no arity, so a query without constants keeps every fact.
    assert db.candidates((X, Y)) == [0, 1, 2, 3, 4]


def test_unknown_indexing_rejected():
    with pytest.raises(ValueError):
        FactDb(indexing='hash')


def test_skeleton_prefilter_drops_shape_mismatches():
    db = FactDb(prefilter=True)
    db.add_facts([('a', 'b'), ('a', 'b', 'c'), ('a', ('b', 'c')), ('a', ())])
    assert db.candidates(('a', X)) == [0, 2, 3]
    assert db.candidates(('a', (X, Y))) == [2]
    assert db.skeleton_prefilter(X, [0, 1, 2]) == [0, 1, 2]


def test_match_facts_yields_only_unifying_facts(animals):
    env, trail = [None] * 2, []
    answers = []
    for _ in match_facts(animals, None, (X, 'is', X), env, trail):
        answers.append(resolve(X, env))
    assert answers == []
    for fid in match_facts(animals, None, (X, 'is', 'feline'), env, trail):
        answers.append((fid, resolve(X, env)))
    assert answers == [(0, 'cat'), (1, 'tiger')]
    assert env == [None, None] and trail == []


def test_match_facts_uses_given_indexer(animals):
    class OnlyLast:
        def ground_match_of(self, query):
            return [len(animals) - 1]

    env, trail = [None], []
    found = [resolve(X, env) for _ in match_facts(animals, OnlyLast(), (X, 'is', 'mammal'), env, trail)]
    assert found == ['rodent']


def test_rebuilt_database_has_equal_indexes():
    db = FactDb(indexing='path', prefilter=True)
    db.add_facts(ANIMALS + [('deep', ('a', ('b', ()))), ()])
    fresh = db.rebuilt()
    assert fresh.facts == db.facts
    assert fresh.const_index == db.const_index
    assert fresh.path_index == db.path_index
    assert fresh.skeletons == db.skeletons


def test_deep_constants_fall_back_to_constant_index():
    deep = 'z'
    for _ in range(PATH_DEPTH_LIMIT + 4):
        deep = ('n', deep)
    db = FactDb(indexing='path')
    db.add_facts([deep, ('n', 'z')])
    query = deep
    assert db.candidates(query) == [0]
    env, trail = [], []
    assert list(match_facts(db, None, query, env, trail)) == [0]


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def test_detect_format():
    assert detect_format('facts.TSV') == 'tsv'
    assert detect_format(Path('x/y.json')) == 'json'
    assert detect_format('kb.pro') == 'nat'
    with pytest.raises(FormatError, match="cannot tell the format"):
        detect_format('notes.txt')


def test_facts_from_nat():
    assert list(facts_from_nat("a b.\nc (d e) 3.")) == [('a', 'b'), ('c', ('d', 'e'), 3)]
    with pytest.raises(NonGroundFact, match="variable"):
        list(facts_from_nat("a X."))
    with pytest.raises(NonGroundFact, match="rules"):
        list(facts_from_nat("a : b."))


def test_facts_from_csv_and_tsv():
    assert list(facts_from_csv('1,H,gas\n\n"2, really",He,gas\n')) == [
        ('1', 'H', 'gas'), ('2, really', 'He', 'gas'),
    ]
    assert list(facts_from_tsv('1\tH\tgas\n\n2\tHe\tgas')) == [('1', 'H', 'gas'), ('2', 'He', 'gas')]


def test_facts_from_csv_reports_line_of_bad_quote():
    with pytest.raises(FormatError) as excinfo:
        list(facts_from_csv('a,b\nc,"d"x\n', 'bad.csv'))
    assert excinfo.value.position == 2
    assert str(excinfo.value).startswith('bad.csv:2:')


def test_facts_from_json_examples():
    assert list(facts_from_json('[1, [2]]')) == [('1', ('2',))]
    assert list(facts_from_json('[[1, "a"], {"k": null, "b": true}]')) == [
        ('1', 'a'),
        (('k', 'null'), ('b', 'true')),
    ]
    assert list(facts_from_json('2.50')) == [('2.50',)]
    assert list(facts_from_json('  \n')) == []
    with pytest.raises(FormatError):
        list(facts_from_json('[1, 2'))


def test_load_facts_from_files(tmp_path):
    db = FactDb()
    (tmp_path / 'empty.csv').write_text('', encoding='utf-8')
    assert load_facts(db, tmp_path / 'empty.csv') == 0
    (tmp_path / 'kb.json').write_text('[["x", 1], ["y", 2]]', encoding='utf-8')
    assert load_facts(db, tmp_path / 'kb.json') == 2
    (tmp_path / 'kb.data').write_text('p q.', encoding='utf-8')
    assert load_facts(db, tmp_path / 'kb.data', fmt='nat') == 1
    assert db.facts == [('x', '1'), ('y', '2'), ('p', 'q')]
    with pytest.raises(FormatError, match="unknown database format"):
        load_facts(db, tmp_path / 'kb.data', fmt='xml')
    with pytest.raises(FileNotFoundError):
        load_facts(db, tmp_path / 'missing.tsv')


def test_load_facts_reads_latin1(tmp_path):
    path = tmp_path / 'names.tsv'
    path.write_bytes('café\tcrème brûlée à la carte, très bien\n'.encode('latin-1'))
    db = FactDb()
    load_facts(db, path)
    assert db.facts[0][0] == 'café'


def test_elements_gases():
    db = FactDb()
    assert load_facts(db, NATPROGS / 'elements.tsv') == 86
    query = tuple(Var(i) for i in range(7)) + ('gas',) + tuple(Var(i) for i in range(7, 10))
    env, trail = [None] * 10, []
    symbols = [resolve(Var(1), env) for _ in match_facts(db, None, query, env, trail)]
    assert symbols == ['H', 'He', 'N', 'O', 'F', 'Ne', 'Cl', 'Ar', 'Kr', 'Xe', 'Rn']


# ---------------------------------------------------------------------------
# Randomized soundness: candidates never miss a unifying fact
# ---------------------------------------------------------------------------

LEAVES = ['a', 'b', 'c', 1, Str('a'), ()]


def random_term(rng, nvars, depth=3):
    if depth == 0 or rng.random() < 0.4:
        if nvars and rng.random() < 0.4:
            return Var(rng.randrange(nvars))
        return rng.choice(LEAVES)
    return tuple(random_term(rng, nvars, depth - 1) for _ in range(rng.randint(1, 3)))


def unifies(query, fact, nvars):
    return ground_unify(query, fact, [None] * nvars, [])


@pytest.mark.parametrize('indexing, prefilter, seed', [
    ('const', False, 1), ('const', True, 2), ('path', False, 3), ('path', True, 4),
])
def test_candidates_are_a_superset_of_matches(indexing, prefilter, seed):
    rng = random.Random(seed)
    db = FactDb(indexing=indexing, prefilter=prefilter)
    db.add_facts(random_term(rng, 0) for _ in range(300))
    hits = 0
    for _ in range(1000):
        query = random_term(rng, 3)
        env, trail = [None] * 3, []
        expected = [i for i, fact in enumerate(db.facts) if unifies(query, fact, 3)]
        candidates = db.candidates(query)
        assert candidates == sorted(set(candidates))
        assert set(expected) <= set(candidates)
        assert list(match_facts(db, None, query, env, trail)) == expected
        hits += len(expected)
    assert hits > 0
