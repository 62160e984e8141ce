import argparse
import copy
import itertools
import logging
import os
import re
import sys
import textwrap
import time
from pathlib import Path
from typing import Any, Iterator, TextIO

# Local imports
import utils
from engine import HostRegistry, Solver
from ground_db import FactDb, load_facts
from neural_index import NeuralDb, TrainConfig
from syntax import NatlogSyntaxError, parse_program, parse_query, render_clause
from term import term_repr
from utils import (
    ConfigNotFoundError,
    InvalidConfigError,
    NatlogError,
    __version__,
    find_default_config,
    load_and_validate_config,
    read_file_best_effort,
    validate_config,
)

NATPROGS = Path(__file__).resolve().parent / 'natprogs'

# name -> (program file, query, expected answer count)
BENCHMARKS = {
    'queens10': ('queens.nat', 'queens 10 Qs ?', 724),
    'perm': ('perm.nat', 'perm (a (b (c (d (e (f ())))))) P ?', 720),
    'tc': ('tc.nat', 'tc Who is animal ?', 8),
}

# Errors raised while reading a program, a query or a database.
LOAD_ERRORS = (OSError, NatlogError)


class _LazyColor:
    """A helper for ANSI colors that respects isatty and NO_COLOR."""

    def __init__(self, code):
        self.code = code

    def __str__(self):
        return self._render(only_stderr=False)

    def _render(self, only_stderr=False):
        # Checked on every conversion, so redirection mid-run is honoured.
        if os.getenv("NO_COLOR"):
            return ""
        if only_stderr:
            return self.code if sys.stderr.isatty() else ""
        if sys.stderr.isatty() or sys.stdout.isatty():
            return self.code
        return ""

    def __format__(self, format_spec):
        return self._render(only_stderr=(format_spec == "only_stderr"))


C_BOLD = _LazyColor("\033[1m")
C_DIM = _LazyColor("\033[90m")
C_YELLOW = _LazyColor("\033[33m")
C_RED = _LazyColor("\033[31m")
C_CYAN = _LazyColor("\033[36m")
C_RESET = _LazyColor("\033[0m")

_ANSI_ESCAPE = re.compile(r'\x1B(?:[@-Z\\-_]|\[[0-?]*[ -/]*[@-~])')


class CLILogFormatter(logging.Formatter):
    """Terminal log formatter: bare INFO lines, coloured level prefixes otherwise."""

    def format(self, record):
        if record.levelno == logging.WARNING:
            prefix = f"{C_YELLOW:only_stderr}WARNING:{C_RESET:only_stderr} "
        elif record.levelno >= logging.ERROR:
            prefix = f"{C_RED:only_stderr}ERROR:{C_RESET:only_stderr} "
        elif record.levelno == logging.DEBUG:
            prefix = f"{C_DIM:only_stderr}DEBUG:{C_RESET:only_stderr} "
        else:
            prefix = ""

        message = record.getMessage()
        if record.exc_info:
            if not message.endswith('\n'):
                message += '\n'
            message += self.formatException(record.exc_info)

        if "\n" in message and prefix:
            indent = " " * len(_ANSI_ESCAPE.sub('', prefix))
            lines = message.splitlines()
            return f"{prefix}{lines[0]}\n" + "\n".join(f"{indent}{line}" for line in lines[1:])
        return f"{prefix}{message}"


class AnsiString(str):
    """A string subclass that reports length without ANSI escape codes."""

    def __len__(self):
        return len(_ANSI_ESCAPE.sub('', self))


class ColoredHelpFormatter(argparse.RawDescriptionHelpFormatter):
    """Help formatter with bold options and cyan section headings."""

    def start_section(self, heading):
        if heading:
            heading = f"{C_BOLD}{C_CYAN}{heading}{C_RESET}"
        super().start_section(heading)

    def _format_action_invocation(self, action):
        if not action.option_strings:
            default = self._get_default_metavar_for_optional(action)
            args_string = self._format_args(action, default)
            return AnsiString(f"{C_BOLD}{args_string}{C_RESET}")
        parts = []
        if action.nargs == 0:
            for option_string in action.option_strings:
                parts.append(f"{C_BOLD}{option_string}{C_RESET}")
        else:
            default = self._get_default_metavar_for_optional(action)
            args_string = self._format_args(action, default)
            dim_args = f"{C_DIM}{args_string}{C_RESET}" if args_string else ""
            for option_string in action.option_strings:
                parts.append(f"{C_BOLD}{option_string}{C_RESET} {dim_args}")
        return AnsiString(', '.join(parts))


# ---------------------------------------------------------------------------
# Library facade
# ---------------------------------------------------------------------------

class Natlog:
    """A Natlog program, an optional ground database and a solver over both.

    >>> n = Natlog(text="good l. good o. goal X : ``iter hello X, good X.")
    >>> [a[1] for a in n.solve("goal X ?")]
    ['l', 'l', 'o']
    """

    def __init__(
        self,
        text: str | None = None,
        file_name: str | Path | None = None,
        db_name: str | Path | None = None,
        db_format: str = 'auto',
        indexer: str = 'const',
        skeleton_prefilter: bool = False,
        occurs_check: bool = False,
        registry: HostRegistry | None = None,
        train_config: TrainConfig | None = None,
        model_path: str | Path | None = None,
    ):
        source = None
        if file_name is not None:
            text, encoding = read_file_best_effort(file_name)
            source = str(file_name)
            logging.debug("Read program %s (encoding: %s)", file_name, encoding)
        self.clauses = parse_program(text or '', source)
        logging.debug("Parsed %d clauses.", len(self.clauses))

        self.db: FactDb | None = None
        if db_name is not None:
            if indexer == 'neural':
                self.db = NeuralDb(train_config, prefilter=skeleton_prefilter)
            else:
                self.db = FactDb(indexer, skeleton_prefilter)
            load_facts(self.db, db_name, db_format)
            if indexer == 'neural':
                if model_path is not None and Path(model_path).is_file():
                    self.db.load_model(model_path)
                else:
                    self.db.train()
        elif indexer == 'neural':
            logging.warning("The neural indexer needs a database; none was given.")

        self.solver = Solver(self.clauses, self.db, registry=registry,
                             occurs_check=occurs_check)

    @classmethod
    def neural(cls, **kwargs) -> 'Natlog':
        """Same as the constructor, with the learned indexer."""
        return cls(indexer='neural', **kwargs)

    def __repr__(self):
        return '\n'.join(render_clause(c) for c in self.clauses)

    def solve(self, query_text: str) -> Iterator[Any]:
        """Lazily yield the answers to ``query_text``."""
        goals = parse_query(query_text)
        return self.solver.solve(goals)

    def count(self, query_text: str) -> int:
        return sum(1 for _ in self.solve(query_text))

    def query(self, query_text: str, max_answers: int = 0, show_goal: bool = True,
              file: TextIO | None = None) -> int:
        """Print ``GOAL PARSED:`` and one ``ANSWER:`` line per answer; return the count."""
        out = file or sys.stdout
        goals = parse_query(query_text)
        if show_goal:
            print(f"GOAL PARSED: {term_repr(tuple(g.term for g in goals))}", file=out)
        answers = self.solver.solve(goals)
        if max_answers:
            answers = itertools.islice(answers, max_answers)
        count = 0
        for answer in answers:
            print(f"ANSWER: {term_repr(answer)}", file=out, flush=True)
            count += 1
        return count

    def repl(self, prompt: str = '?- ', max_answers: int = 0) -> None:
        """Read queries until ``halt.`` or end of input, answering each one."""
        if sys.stdin.isatty():
            try:
                import readline  # noqa: F401
            except ImportError:
                pass
        while True:
            try:
                line = input(prompt)
            except EOFError:
                print()
                break
            except KeyboardInterrupt:
                print()
                continue
            line = line.strip()
            if not line or line.startswith('%'):
                continue
            if line in ('halt.', 'halt'):
                break
            if not line.endswith('?'):
                print("Queries end with '?'; type 'halt.' to leave.")
                continue
            try:
                self.query(line, max_answers=max_answers, show_goal=False)
            except KeyboardInterrupt:
                print("Interrupted.")
            except NatlogError as e:
                logging.error("%s", e)
            except (RecursionError, MemoryError) as e:
                logging.error("query aborted: %s", type(e).__name__)


# ---------------------------------------------------------------------------
# Command-line operations
# ---------------------------------------------------------------------------

def build_natlog(config: dict) -> Natlog:
    """Create a :class:`Natlog` from a validated configuration."""
    db_conf = config['database']
    neural_conf = config['neural']
    train_config = None
    if db_conf['indexer'] == 'neural':
        train_config = TrainConfig.from_config(neural_conf)
    program_path = config['program']['path']
    return Natlog(
        text='' if program_path is None else None,
        file_name=program_path,
        db_name=db_conf['path'],
        db_format=db_conf['format'],
        indexer=db_conf['indexer'],
        skeleton_prefilter=db_conf['skeleton_prefilter'],
        occurs_check=config['engine']['occurs_check'],
        train_config=train_config,
        model_path=neural_conf['model_path'],
    )


def _load(config: dict, verbose: bool = False) -> Natlog | None:
    try:
        return build_natlog(config)
    except FileNotFoundError as e:
        logging.error("File not found: %s", e.filename or e)
    except LOAD_ERRORS as e:
        logging.error("%s", e, exc_info=verbose)
    return None


def run(config: dict, query: str, verbose: bool = False, save_model: str | None = None) -> int:
    """Answer ``query`` against the configured program; return the exit code."""
    natlog = _load(config, verbose)
    if natlog is None:
        return 1
    if save_model:
        if not _save_model(natlog, save_model, verbose):
            return 1

    output_conf = config['output']
    start = time.perf_counter()
    try:
        natlog.query(
            query,
            max_answers=config['engine']['max_answers'],
            show_goal=output_conf['show_goal'],
        )
    except NatlogSyntaxError as e:
        logging.error("%s", e)
        return 1
    except NatlogError as e:
        logging.error("%s", e, exc_info=verbose)
        return 2
    if output_conf['timing']:
        print(f"TIME: {time.perf_counter() - start:.3f} s")
    return 0


def _save_model(natlog: Natlog, path: str, verbose: bool) -> bool:
    if not isinstance(natlog.db, NeuralDb):
        logging.error("--save-model needs the neural indexer and a database.")
        return False
    try:
        natlog.db.save_model(path)
    except (OSError, NatlogError) as e:
        logging.error("Could not save the model: %s", e, exc_info=verbose)
        return False
    return True


def repl(config: dict, verbose: bool = False) -> int:
    natlog = _load(config, verbose)
    if natlog is None:
        return 1
    print(f"Natlog {__version__}. End queries with '?', type 'halt.' to leave.")
    natlog.repl(max_answers=config['engine']['max_answers'])
    return 0


def bench(config: dict, name: str) -> int:
    """Run a bundled benchmark to exhaustion and report its answer count and time."""
    file_name, query, expected = BENCHMARKS[name]
    natlog = Natlog(
        file_name=NATPROGS / file_name,
        occurs_check=config['engine']['occurs_check'],
    )
    start = time.perf_counter()
    count = 0
    with utils._progress_bar(
        natlog.solve(query),
        enabled=utils._progress_enabled(),
        desc=name,
        unit=" answers",
        leave=False,
    ) as answers:
        for _ in answers:
            count += 1
    elapsed = time.perf_counter() - start
    print(f"{name}: {count} answers in {elapsed:.3f} s")
    if count != expected:
        logging.error("%s: expected %d answers, got %d.", name, expected, count)
        return 2
    return 0


def _apply_cli_overrides(config: dict, args) -> None:
    """Copy command-line flags over the loaded configuration."""
    if args.program:
        config['program']['path'] = args.program
    db_conf = config['database']
    if args.db:
        db_conf['path'] = args.db
    if args.db_format:
        db_conf['format'] = args.db_format
    if args.indexer:
        db_conf['indexer'] = args.indexer
    if args.skeleton_prefilter:
        db_conf['skeleton_prefilter'] = True
    if args.occurs_check:
        config['engine']['occurs_check'] = True
    if args.max_answers is not None:
        config['engine']['max_answers'] = args.max_answers
    if args.timing:
        config['output']['timing'] = True
    if args.no_goal:
        config['output']['show_goal'] = False

    neural_flags = {
        'hidden_size': args.hidden,
        'epochs': args.epochs,
        'learning_rate': args.lr,
        'threshold': args.threshold,
        'seed': args.seed,
        'optimizer': args.optimizer,
        'model_path': args.load_model,
    }
    given = [k for k, v in neural_flags.items() if v is not None]
    if (given or args.save_model) and db_conf['indexer'] != 'neural':
        raise InvalidConfigError(
            "Neural options (--hidden, --epochs, --lr, --threshold, --seed, --optimizer, "
            "--save-model, --load-model) need '--indexer neural'."
        )
    for key in given:
        config['neural'][key] = neural_flags[key]


def _handle_invalid_config_error(exc, verbose, message=None):
    """Log a configuration problem and exit with status 1."""
    if verbose:
        logging.error(message or str(exc), exc_info=True)
    else:
        logging.error(message or str(exc))
    sys.exit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="natlog",
        description=(
            "Run Natlog logic programs: answer a query in batch mode, talk to the "
            "interactive top level, or time the bundled benchmarks."
        ),
        formatter_class=ColoredHelpFormatter,
        epilog=textwrap.dedent("""
            Examples:
              # Answer one query
              python natlog.py natprogs/tc.nat "tc Who is animal ?"

              # Query a tab-separated dataset through the learned indexer
              python natlog.py natprogs/elements.nat --db natprogs/elements.tsv \\
                  --indexer neural "gases Num Element ?"

              # Start the interactive top level
              python natlog.py natprogs/perm.nat

              # Time the 10 queens program
              python natlog.py --bench queens10
        """),
    )

    core_group = parser.add_argument_group("Core Options")
    core_group.add_argument("program", nargs="?", help="The '.nat' program file to load.")
    core_group.add_argument(
        "query",
        nargs="?",
        help="A query ending with '?'. Without one, the interactive top level starts.",
    )
    core_group.add_argument(
        "--config",
        metavar="FILE",
        help="Read settings from this YAML file instead of './natlog.yml'.",
    )
    core_group.add_argument(
        "--verbose", "-v", action="store_true", help="Show debug messages and tracebacks."
    )

    db_group = parser.add_argument_group("Ground Database")
    db_group.add_argument("--db", metavar="FILE", help="Load facts from a .nat, .csv, .tsv or .json file.")
    db_group.add_argument(
        "--db-format", choices=utils.DB_FORMATS, help="Database file format (default: from the file extension)."
    )
    db_group.add_argument(
        "--indexer", choices=utils.INDEXERS, help="How candidate facts are found (default: const)."
    )
    db_group.add_argument(
        "--skeleton-prefilter", action="store_true", help="Drop candidates whose shape cannot match the query."
    )
    db_group.add_argument("--list", action="store_true", help="Print the program clauses and the facts, then continue.")

    engine_group = parser.add_argument_group("Engine")
    engine_group.add_argument("--occurs-check", action="store_true", help="Unify with the occurs check.")
    engine_group.add_argument(
        "--max-answers", type=int, metavar="N", help="Stop after N answers (0 means no limit)."
    )
    engine_group.add_argument("--timing", action="store_true", help="Print the time spent answering.")
    engine_group.add_argument("--no-goal", action="store_true", help="Do not print the 'GOAL PARSED:' line.")
    engine_group.add_argument(
        "--bench", choices=sorted(BENCHMARKS), help="Run a bundled benchmark and report count and time."
    )

    neural_group = parser.add_argument_group("Neural Indexer (with --indexer neural)")
    neural_group.add_argument("--hidden", type=int, metavar="N", help="Hidden layer size (0 picks one).")
    neural_group.add_argument("--epochs", type=int, metavar="N", help="Training epochs.")
    neural_group.add_argument("--lr", type=float, metavar="RATE", help="Learning rate.")
    neural_group.add_argument("--threshold", type=float, metavar="P", help="Output probability that counts as a match.")
    neural_group.add_argument("--seed", type=int, help="Seed for weight initialization.")
    neural_group.add_argument("--optimizer", choices=utils.OPTIMIZERS, help="Training method (default: adam).")
    neural_group.add_argument("--save-model", metavar="FILE", help="Save the trained model to a .npz file.")
    neural_group.add_argument("--load-model", metavar="FILE", help="Use a saved model instead of training.")

    utility_group = parser.add_argument_group("Utility Commands")
    utility_group.add_argument(
        "--show-config", action="store_true", help="Show the final merged configuration and exit."
    )
    utility_group.add_argument(
        "--version", "-V", action="version", version=f"%(prog)s {__version__}",
        help="Show the version and exit.",
    )
    return parser


def main(argv=None):
    """Parse arguments and run a query, the top level or a benchmark."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    # Logging is configured before the config is read, since loading logs.
    root_logger = logging.getLogger()
    if not root_logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(CLILogFormatter())
        root_logger.addHandler(handler)
    root_logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)

    config_path = args.config
    if config_path is None:
        found = find_default_config('.')
        if found is not None:
            config_path = str(found)
            logging.debug("Auto-found config file: %s", config_path)

    try:
        if config_path:
            config = load_and_validate_config(config_path)
        else:
            config = copy.deepcopy(utils.DEFAULT_CONFIG)
            validate_config(config)
        _apply_cli_overrides(config, args)
        validate_config(config)
    except ConfigNotFoundError:
        logging.error("Could not find the configuration file '%s'.", config_path)
        sys.exit(1)
    except InvalidConfigError as e:
        _handle_invalid_config_error(e, args.verbose, f"The configuration is not valid: {e}")

    if not args.verbose:
        root_logger.setLevel(config['logging']['level'])

    if args.show_config:
        sys.stdout.write(utils.dump_yaml_config(config))
        sys.exit(0)

    if args.bench:
        sys.exit(bench(config, args.bench))

    if args.list:
        natlog = _load(config, args.verbose)
        if natlog is None:
            sys.exit(1)
        if natlog.clauses:
            print(repr(natlog))
        if natlog.db is not None:
            print(repr(natlog.db))

    if args.query:
        sys.exit(run(config, args.query, args.verbose, args.save_model))
    if args.save_model:
        natlog = _load(config, args.verbose)
        if natlog is None or not _save_model(natlog, args.save_model, args.verbose):
            sys.exit(1)
        sys.exit(0)
    if args.list:
        sys.exit(0)
    sys.exit(repl(config, args.verbose))


if __name__ == "__main__":
    main()
