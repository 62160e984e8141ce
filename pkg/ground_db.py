"""Ground fact databases with content-driven indexing.

Every constant of a fact points back to the facts it occurs in; a query's
candidate facts are the intersection of those sets over the query's
constants. Candidates are a superset of the facts that really unify, and
:func:`match_facts` filters them with :func:`unify.ground_unify`.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Iterator, Protocol

from syntax import parse_program
from term import (
    WILDCARD,
    const_of,
    is_ground,
    iter_paths,
    skeleton_matches,
    skeleton_of,
    term_repr,
)
from unify import ground_unify, resolve, undo_to
from utils import NatlogError, read_file_best_effort

# Constants deeper than this are looked up in the constant index only.
PATH_DEPTH_LIMIT = 16

DB_SUFFIXES = {'.nat': 'nat', '.pro': 'nat', '.csv': 'csv', '.tsv': 'tsv', '.json': 'json'}


class NonGroundFact(NatlogError):
    """Raised when a fact to be stored contains a variable, or is a rule."""


class FormatError(NatlogError):
    """Raised when a dataset file cannot be read as facts."""

    def __init__(self, message: str, path: str | None = None, position: int | None = None):
        super().__init__(message)
        self.message = message
        self.path = path
        self.position = position

    def __str__(self):
        where = self.path or '<input>'
        if self.position is not None:
            where = f"{where}:{self.position}"
        return f"{where}: {self.message}"


class Indexer(Protocol):
    """Anything mapping a query term to the ascending ids of candidate facts."""

    def ground_match_of(self, query: Any) -> list[int]:
        ...


def _intersect(sets: list[set[int]]) -> list[int]:
    if not sets:
        return []
    sets.sort(key=len)
    found = sets[0]
    for other in sets[1:]:
        if not found:
            break
        found = found & other
    return sorted(found)


class FactDb:
    """Append-only store of ground facts, identified by insertion position.

    ``indexing`` picks the candidate source used by :meth:`candidates`
    (``'const'`` or ``'path'``); ``prefilter`` adds the skeleton test.
    """

    def __init__(self, indexing: str = 'const', prefilter: bool = False):
        if indexing not in ('const', 'path'):
            raise ValueError(f"unknown indexing {indexing!r}")
        self.indexing = indexing
        self.prefilter = prefilter
        self.facts: list = []
        self.const_index: dict[Any, set[int]] = {}
        self.path_index: dict[tuple, set[int]] | None = {} if indexing == 'path' else None
        self.skeletons: list | None = [] if prefilter else None
        self.indexer: Indexer = PathIndexer(self) if indexing == 'path' else self

    def __len__(self):
        return len(self.facts)

    def __iter__(self) -> Iterator:
        return iter(self.facts)

    def __repr__(self):
        return "\n".join(f"{i}: {term_repr(fact)}" for i, fact in enumerate(self.facts))

    def add_fact(self, fact: Any) -> int:
        """Store ``fact`` and index it; return its id."""
        if not is_ground(fact):
            raise NonGroundFact(f"fact {term_repr(fact)} contains a variable")
        fid = len(self.facts)
        self.facts.append(fact)
        for c in const_of(fact):
            self.const_index.setdefault(c, set()).add(fid)
        if self.path_index is not None:
            self._index_paths(fid, fact)
        if self.skeletons is not None:
            self.skeletons.append(skeleton_of(fact))
        return fid

    def add_facts(self, facts: Iterable) -> int:
        count = 0
        for fact in facts:
            self.add_fact(fact)
            count += 1
        return count

    def _index_paths(self, fid: int, fact: Any) -> None:
        for key in iter_paths(fact, PATH_DEPTH_LIMIT):
            self.path_index.setdefault(key, set()).add(fid)

    def all_ids(self) -> list[int]:
        return list(range(len(self.facts)))

    def ground_match_of(self, query: Any) -> list[int]:
        """Ids of facts containing every constant of ``query``, ascending.

        A query without constants matches every fact; a constant that no fact
        contains rules out every fact.
        """
        constants = const_of(query)
        if not constants:
            return self.all_ids()
        sets = []
        for c in constants:
            ids = self.const_index.get(c)
            if ids is None:
                return []
            sets.append(ids)
        return _intersect(sets)

    def ground_match_of_paths(self, query: Any) -> list[int]:
        """Like :meth:`ground_match_of`, keyed on where each constant sits."""
        if self.path_index is None:
            self.path_index = {}
            for fid, fact in enumerate(self.facts):
                self._index_paths(fid, fact)
        sets = []
        for path, c in iter_paths(query):
            if len(path) <= PATH_DEPTH_LIMIT:
                ids = self.path_index.get((path, c))
            else:
                ids = self.const_index.get(c)
            if ids is None:
                return []
            sets.append(ids)
        if not sets:
            return self.all_ids()
        return _intersect(sets)

    def skeleton_prefilter(self, query: Any, candidates: Iterable[int]) -> list[int]:
        """Drop the candidates whose shape rules out unification with ``query``."""
        query_skel = skeleton_of(query)
        if query_skel == WILDCARD:
            return list(candidates)
        if self.skeletons is not None:
            skeletons = self.skeletons
            return [i for i in candidates if skeleton_matches(query_skel, skeletons[i])]
        facts = self.facts
        return [i for i in candidates if skeleton_matches(query_skel, skeleton_of(facts[i]))]

    def candidates(self, query: Any) -> list[int]:
        """Candidate ids from this database's indexer, skeleton-filtered if enabled."""
        ids = self.indexer.ground_match_of(query)
        if self.prefilter:
            ids = self.skeleton_prefilter(query, ids)
        return ids

    def rebuilt(self) -> 'FactDb':
        """Return a copy whose indexes are recomputed from the facts alone."""
        fresh = FactDb(self.indexing, self.prefilter)
        fresh.add_facts(self.facts)
        return fresh


class PathIndexer:
    """Path-to-constant indexing of a :class:`FactDb` behind the Indexer protocol."""

    def __init__(self, db: FactDb):
        self.db = db

    def ground_match_of(self, query: Any) -> list[int]:
        return self.db.ground_match_of_paths(query)


def match_facts(db: FactDb, indexer: Indexer | None, query: Any,
                env: list, trail: list) -> Iterator[int]:
    """Yield the id of each fact unifying with ``query``, bindings in place.

    Bindings made for one fact are undone before the next candidate is tried
    and after the last one.
    """
    ground_query = resolve(query, env)
    if indexer is None:
        ids = db.candidates(ground_query)
    else:
        ids = indexer.ground_match_of(ground_query)
        if db.prefilter:
            ids = db.skeleton_prefilter(ground_query, ids)
    facts = db.facts
    for fid in ids:
        mark = len(trail)
        if ground_unify(query, facts[fid], env, trail):
            yield fid
            undo_to(mark, trail, env)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def detect_format(source: str | Path) -> str:
    suffix = Path(source).suffix.lower()
    fmt = DB_SUFFIXES.get(suffix)
    if fmt is None:
        raise FormatError(
            f"cannot tell the format of '{suffix or source}'; "
            f"use one of: {', '.join(sorted(set(DB_SUFFIXES.values())))}",
            str(source),
        )
    return fmt


def facts_from_nat(text: str, path: str | None = None) -> Iterator[tuple]:
    for clause in parse_program(text, path):
        if clause.body:
            raise NonGroundFact(f"{path or '<input>'}: rules are not allowed in a fact file")
        if clause.nvars:
            raise NonGroundFact(f"{path or '<input>'}: fact {term_repr(clause.head)} contains a variable")
        yield clause.head


def facts_from_csv(text: str, path: str | None = None) -> Iterator[tuple]:
    """Rows become flat tuples of text cells; blank rows are skipped."""
    reader = csv.reader(io.StringIO(text, newline=''), strict=True)
    try:
        for row in reader:
            if row and any(cell for cell in row):
                yield tuple(row)
    except csv.Error as e:
        raise FormatError(str(e), path, reader.line_num) from e


def facts_from_tsv(text: str, path: str | None = None) -> Iterator[tuple]:
    for line in text.splitlines():
        if line.strip():
            yield tuple(line.split('\t'))


def from_json(value: Any) -> Any:
    """Map a decoded JSON value to a ground term.

    Arrays become tuples, objects become tuples of ``(key value)`` pairs in
    document order and scalars become symbolic constants (numbers keep the
    text they were written with).
    """
    if isinstance(value, list):
        return tuple(from_json(x) for x in value)
    if isinstance(value, dict):
        return tuple((key, from_json(x)) for key, x in value.items())
    if value is None:
        return 'null'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)


def facts_from_json(text: str, path: str | None = None) -> Iterator[tuple]:
    """A top-level array of arrays/objects gives one fact per element.

    Any other document becomes a single fact.
    """
    if not text.strip():
        return
    try:
        doc = json.loads(text, parse_int=str, parse_float=str, parse_constant=str)
    except json.JSONDecodeError as e:
        raise FormatError(f"{e.msg} (line {e.lineno}, column {e.colno})", path, e.pos) from e
    if isinstance(doc, list) and all(isinstance(x, (list, dict)) for x in doc):
        for item in doc:
            yield from_json(item)
        return
    term = from_json(doc)
    yield term if type(term) is tuple else (term,)


_READERS = {
    'nat': facts_from_nat,
    'csv': facts_from_csv,
    'tsv': facts_from_tsv,
    'json': facts_from_json,
}


def load_facts(db: FactDb, source: str | Path, fmt: str = 'auto') -> int:
    """Add the facts of the file ``source`` to ``db``; return how many were added."""
    if fmt == 'auto':
        fmt = detect_format(source)
    reader = _READERS.get(fmt)
    if reader is None:
        raise FormatError(f"unknown database format '{fmt}'", str(source))
    text, encoding = read_file_best_effort(source)
    logging.debug("Reading %s facts from %s (encoding: %s)", fmt, source, encoding)
    count = db.add_facts(reader(text, str(source)))
    logging.info("Loaded %d facts from %s (%d constants indexed).",
                 count, source, len(db.const_index))
    return count
