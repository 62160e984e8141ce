"""Scanner and parser for Natlog's sentence syntax.

Facts and rules are whitespace separated words with parenthesized tuples,
ended by ``.``; queries end with ``?``. Capitalized or ``_``-initial words
are variables unless quoted::

    tc A Rel C : A Rel B, tc1 B Rel C.
    tc Who is animal ?

A goal may carry one of the prefixes ``#`` (action), `` ` `` (function),
```` `` ```` (generator), ``^`` (yield an answer) or ``~`` (ground database).
"""

import re
from typing import Any, Iterable, NamedTuple

from term import Real, Str, Var
from utils import NatlogError

# Goal annotations are the prefix sigils themselves; plain goals have none.
PLAIN = ''
ACTION = '#'
FUN = '`'
GEN = '``'
YIELD = '^'
DB = '~'
PREFIXES = (ACTION, FUN, GEN, YIELD, DB)

_TOKEN_RE = re.compile(r"""
      (?P<SPACE>\s+)
    | (?P<COMMENT>%[^\n]*)
    | (?P<SQ>'(?:[^'\\\n]|\\.)*')
    | (?P<DQ>"(?:[^"\\\n]|\\.)*")
    | (?P<BADQ>['"])
    | (?P<NUM>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?(?!\w))
    | (?P<NAME>[\w-]*\w[\w-]*)
    | (?P<PREFIX>``|[`\#^~])
    | (?P<LPAREN>\()
    | (?P<RPAREN>\))
    | (?P<COLON>:)
    | (?P<COMMA>,)
    | (?P<DOT>\.)
    | (?P<QMARK>\?)
    | (?P<SYMBOL>[-+*/\\<>=@&$!|;{}\[\]]+)
""", re.VERBOSE)

_ESCAPE_RE = re.compile(r'\\(.)')
_ESCAPES = {'n': '\n', 't': '\t'}
_PLAIN_WORD_RE = re.compile(r'-*[^\W\d_][\w-]*|[-+*/\\<>=@&$!|;{}\[\]]+')


class NatlogSyntaxError(NatlogError):
    """A problem in Natlog source text, located by file, line and column."""

    def __init__(self, message: str, line: int | None = None,
                 column: int | None = None, path: str | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column
        self.path = path

    def __str__(self):
        where = self.path or '<input>'
        if self.line is not None:
            where = f"{where}:{self.line}:{self.column}"
        return f"{where}: {self.message}"


class LexError(NatlogSyntaxError):
    """Raised on an unterminated quote or a character no token can start with."""


class ParseError(NatlogSyntaxError):
    """Raised when tokens do not form a clause or a query."""


class Token(NamedTuple):
    kind: str
    lexeme: str
    line: int
    column: int


class Goal(NamedTuple):
    kind: str
    term: tuple


class Clause(NamedTuple):
    head: tuple
    body: tuple
    nvars: int


def _unquote(text: str) -> str:
    return _ESCAPE_RE.sub(lambda m: _ESCAPES.get(m[1], m[1]), text[1:-1])


def tokenize(src: str, path: str | None = None) -> list[Token]:
    """Split ``src`` into tokens, dropping whitespace and ``%`` comments.

    Word kinds are ``WORD``, ``VAR``, ``NUM`` and ``STR``; quotes are stripped
    from ``WORD`` (single quotes) and ``STR`` (double quotes) lexemes.
    """
    tokens = []
    pos = 0
    line = 1
    line_start = 0
    end = len(src)
    while pos < end:
        m = _TOKEN_RE.match(src, pos)
        column = pos - line_start + 1
        if m is None:
            raise LexError(f"illegal character {src[pos]!r}", line, column, path)
        kind = m.lastgroup
        text = m.group()
        if kind == 'BADQ':
            raise LexError("unterminated quote", line, column, path)
        if kind == 'SQ':
            tokens.append(Token('WORD', _unquote(text), line, column))
        elif kind == 'DQ':
            tokens.append(Token('STR', _unquote(text), line, column))
        elif kind == 'NAME':
            first = text[0]
            is_var = first == '_' or first.isupper()
            tokens.append(Token('VAR' if is_var else 'WORD', text, line, column))
        elif kind == 'SYMBOL':
            tokens.append(Token('WORD', text, line, column))
        elif kind not in ('SPACE', 'COMMENT'):
            tokens.append(Token(kind, text, line, column))

        newlines = text.count('\n')
        if newlines:
            line += newlines
            line_start = pos + text.rindex('\n') + 1
        pos = m.end()
    return tokens


def _number(lexeme: str) -> int | Real:
    if any(c in lexeme for c in '.eE'):
        return Real(float(lexeme))
    return int(lexeme)


class _Parser:
    """Parser over the token list of one source text."""

    _ITEM_START = ('WORD', 'VAR', 'NUM', 'STR', 'LPAREN')

    def __init__(self, tokens: list[Token], src: str, path: str | None):
        self.tokens = tokens
        self.pos = 0
        self.path = path
        self.eof_line = src.count('\n') + 1
        self.eof_column = len(src) - (src.rfind('\n') + 1) + 1
        self.names: dict[str, int] = {}
        self.nvars = 0

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def error(self, message: str, token: Token | None = None) -> ParseError:
        if token is None:
            token = self.peek()
        if token is None:
            return ParseError(message, self.eof_line, self.eof_column, self.path)
        return ParseError(message, token.line, token.column, self.path)

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def start_sentence(self):
        self.names = {}
        self.nvars = 0

    def fresh_var(self) -> Var:
        v = Var(self.nvars)
        self.nvars += 1
        return v

    def atom(self, tok: Token) -> Any:
        kind = tok.kind
        if kind == 'WORD':
            return tok.lexeme
        if kind == 'VAR':
            if tok.lexeme == '_':
                return self.fresh_var()
            v = self.names.get(tok.lexeme)
            if v is None:
                v = self.names[tok.lexeme] = self.fresh_var()
            return v
        if kind == 'NUM':
            return _number(tok.lexeme)
        return Str(tok.lexeme)

    def item(self) -> Any:
        """Read one item; parenthesised groups may nest to any depth."""
        groups: list[tuple[Token, list]] = []
        while True:
            tok = self.tokens[self.pos]
            self.pos += 1
            if tok.kind == 'LPAREN':
                groups.append((tok, []))
            else:
                value = self.atom(tok)
                if not groups:
                    return value
                groups[-1][1].append(value)
            while groups:
                nxt = self.peek()
                if nxt is None or nxt.kind not in self._ITEM_START + ('RPAREN',):
                    raise self.error("unbalanced parentheses: missing ')'", nxt or groups[-1][0])
                if nxt.kind != 'RPAREN':
                    break
                self.pos += 1
                value = tuple(groups.pop()[1])
                if not groups:
                    return value
                groups[-1][1].append(value)

    def items(self) -> tuple:
        found = []
        while True:
            tok = self.peek()
            if tok is None or tok.kind not in self._ITEM_START:
                break
            found.append(self.item())
        tok = self.peek()
        if tok is not None and tok.kind == 'RPAREN':
            raise self.error("unbalanced parentheses: unexpected ')'", tok)
        return tuple(found)

    def goal(self) -> Goal:
        tok = self.peek()
        kind = PLAIN
        if tok is not None and tok.kind == 'PREFIX':
            kind = tok.lexeme
            self.pos += 1
        term = self.items()
        if not term:
            raise self.error("empty goal", tok)
        if kind in (FUN, GEN) and len(term) < 2:
            raise self.error(
                f"'{kind}{term[0]}' needs a result argument after the function name", tok
            )
        return Goal(kind, term)

    def goals(self) -> tuple:
        body = [self.goal()]
        while True:
            tok = self.peek()
            if tok is None or tok.kind != 'COMMA':
                return tuple(body)
            self.pos += 1
            body.append(self.goal())

    def clause(self) -> Clause:
        self.start_sentence()
        first = self.peek()
        if first.kind == 'PREFIX':
            raise self.error("a clause head cannot carry a prefix", first)
        head = self.items()
        if not head:
            raise self.error("empty sentence", first)
        body = ()
        tok = self.peek()
        if tok is not None and tok.kind == 'COLON':
            self.pos += 1
            body = self.goals()
            tok = self.peek()
        if tok is None:
            raise self.error("missing '.' at end of clause")
        if tok.kind == 'QMARK':
            raise self.error("queries cannot appear in a program; end clauses with '.'", tok)
        if tok.kind != 'DOT':
            raise self.error(f"unexpected {tok.lexeme!r}, expected '.'", tok)
        self.pos += 1
        return Clause(head, body, self.nvars)

    def query(self) -> tuple:
        self.start_sentence()
        if self.at_end():
            raise self.error("empty query")
        goals = self.goals()
        tok = self.peek()
        if tok is None:
            raise self.error("missing '?' at end of query")
        if tok.kind == 'COLON':
            raise self.error("rule syntax is not allowed in a query", tok)
        if tok.kind != 'QMARK':
            raise self.error(f"unexpected {tok.lexeme!r}, expected '?'", tok)
        self.pos += 1
        if not self.at_end():
            raise self.error("unexpected text after '?'")
        return goals


def parse_program(src: str, path: str | None = None) -> list[Clause]:
    """Parse every ``.``-terminated sentence of ``src`` into a :class:`Clause`."""
    parser = _Parser(tokenize(src, path), src, path)
    clauses = []
    while not parser.at_end():
        clauses.append(parser.clause())
    return clauses


def parse_query(src: str, path: str | None = None) -> tuple:
    """Parse a ``?``-terminated query into its goals, numbering variables from 0."""
    parser = _Parser(tokenize(src, path), src, path)
    return parser.query()


def goal_nvars(goals: Iterable[Goal]) -> int:
    """Return one more than the largest variable index used by ``goals``."""
    top = -1
    for goal in goals:
        stack = list(goal.term)
        while stack:
            x = stack.pop()
            if type(x) is Var:
                if x.index > top:
                    top = x.index
            elif type(x) is tuple:
                stack.extend(x)
    return top + 1


def _quote(text: str, quote: str) -> str:
    escaped = text.replace('\\', '\\\\').replace(quote, '\\' + quote)
    escaped = escaped.replace('\n', '\\n').replace('\t', '\\t')
    return f"{quote}{escaped}{quote}"


def _render_leaf(t: Any) -> str:
    kind = type(t)
    if kind is Var:
        return f"_{t.index}"
    if kind is str:
        return t if _PLAIN_WORD_RE.fullmatch(t) and not t[0].isupper() else _quote(t, "'")
    if kind is Str:
        return _quote(str.__str__(t), '"')
    return repr(t)


def render_term(t: Any) -> str:
    """Render a term in surface syntax; variables print as ``_N``."""
    if type(t) is not tuple:
        return _render_leaf(t)
    parts = []
    work: list = [(False, t)]
    while work:
        literal, x = work.pop()
        if literal:
            parts.append(x)
        elif type(x) is tuple:
            parts.append('(')
            work.append((True, ')'))
            for i in range(len(x) - 1, -1, -1):
                work.append((False, x[i]))
                if i:
                    work.append((True, ' '))
        else:
            parts.append(_render_leaf(x))
    return ''.join(parts)


def render_goal(goal: Goal) -> str:
    return goal.kind + ' '.join(render_term(x) for x in goal.term)


def render_clause(clause: Clause) -> str:
    """Render ``clause`` as a sentence that parses back to the same clause."""
    head = ' '.join(render_term(x) for x in clause.head)
    if not clause.body:
        return f"{head}."
    body = ', '.join(render_goal(g) for g in clause.body)
    return f"{head} : {body}."
