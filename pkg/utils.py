import codecs
import copy
import logging
import os
from pathlib import Path
from typing import Any, Mapping, Sequence

from charset_normalizer import from_bytes

try:  # Mandatory dependency for YAML support, but handled gracefully
    import yaml
except ImportError:
    yaml = None


__version__ = "0.4.0"
DEFAULT_CONFIG_FILENAMES = ('natlog.yml', 'natlog.yaml')

DB_FORMATS = ('auto', 'nat', 'csv', 'tsv', 'json')
INDEXERS = ('const', 'path', 'neural')
OPTIMIZERS = ('adam', 'sgd')
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')

DEFAULT_CONFIG = {
    'logging': {
        'level': 'INFO',
    },
    'program': {
        'path': None,
    },
    'database': {
        'path': None,
        'format': 'auto',
        'indexer': 'const',
        'skeleton_prefilter': False,
    },
    'engine': {
        'occurs_check': False,
        # 0 means no limit
        'max_answers': 0,
    },
    'neural': {
        # 0 picks max(16, facts, constants)
        'hidden_size': 0,
        'epochs': 2000,
        'learning_rate': 0.05,
        'threshold': 0.5,
        'seed': 42,
        'optimizer': 'adam',
        'model_path': None,
    },
    'output': {
        'timing': False,
        'show_goal': True,
    },
}


class NatlogError(Exception):
    """Base class for errors raised by the Natlog engine and its tools."""


class ConfigNotFoundError(FileNotFoundError):
    """The YAML settings file named on the command line does not exist."""


class InvalidConfigError(NatlogError):
    """The settings could not be parsed or hold a value out of range."""


def _require_yaml(action: str) -> None:
    if yaml is None:
        raise InvalidConfigError(
            f"Natlog needs the 'PyYAML' library to {action} YAML settings. "
            "Install it with: pip install pyyaml"
        )


def _describe_yaml_error(e) -> str:
    """Turn a PyYAML exception into a one-line message with its position."""
    mark = getattr(e, 'problem_mark', None)
    where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""

    problem = getattr(e, 'problem', None) or str(e)
    context = getattr(e, 'context', None)
    message = f"Error parsing YAML file{where}: "
    message += f"{context}: {problem}" if context else problem

    # An unterminated quote makes the scanner run to the end of the file.
    if isinstance(e, yaml.scanner.ScannerError) and context and 'quoted scalar' in context:
        message += " (Check for missing closing quotes in the YAML file.)"
    return message


def load_yaml_config(config_file_path):
    """Read a settings file and return its raw (unvalidated) mapping."""
    _require_yaml('load')

    logging.info("Loading configuration from: %s", config_file_path)
    try:
        with open(config_file_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigNotFoundError(
            f"Configuration file not found at '{config_file_path}'."
        ) from e
    except (AttributeError, yaml.YAMLError) as e:
        raise InvalidConfigError(_describe_yaml_error(e)) from e

    if config is None:
        raise InvalidConfigError("Configuration file is empty or invalid.")
    return config


def dump_yaml_config(config) -> str:
    """Return ``config`` as YAML text, keeping section order."""
    _require_yaml('show')
    return yaml.dump(config, sort_keys=False)


def _decode_text(raw_bytes: bytes, source_label: str) -> tuple[str, str]:
    # UTF-8 first; NUL characters mean it only decoded by accident (UTF-16 and friends).
    try:
        text = raw_bytes.decode('utf-8-sig')
    except UnicodeError:
        text = None
    if text is not None and '\x00' not in text:
        return text, 'utf-8-sig' if raw_bytes.startswith(codecs.BOM_UTF8) else 'utf-8'

    match = from_bytes(raw_bytes).best()
    if match is not None and match.encoding:
        try:
            return raw_bytes.decode(match.encoding, errors='replace').lstrip('\ufeff'), match.encoding
        except LookupError:
            logging.warning("Python cannot decode '%s', detected for %s.", match.encoding, source_label)

    logging.warning("Could not detect encoding for %s; decoding with UTF-8 replacements.", source_label)
    return raw_bytes.decode('utf-8', errors='replace').lstrip('\ufeff'), 'utf-8'


def read_file_best_effort(file_path: str | Path) -> tuple[str, str]:
    """Read a program, dataset or query file as text.

    Programs and datasets come from many editors and spreadsheets, so a
    file that is not UTF-8 is handed to charset-normalizer, and as a last
    resort decoded as UTF-8 with replacement characters. A missing file
    raises ``FileNotFoundError``.

    Returns:
        (str, str): The text and the name of the encoding used.
    """
    return _decode_text(Path(file_path).read_bytes(), str(file_path))


def _raise_validation_error(key: str, context: str, requirement: str) -> None:
    """Raise InvalidConfigError naming the offending ``section.key``."""
    raise InvalidConfigError(f"'{context}.{key}' {requirement}.")


def _validate_bool(container: Mapping[str, Any], key: str, context: str) -> None:
    val = container.get(key)
    if val is not None and not isinstance(val, bool):
        _raise_validation_error(key, context, "must be true or false")


def _validate_count(
    container: Mapping[str, Any], key: str, context: str, types: Any = int
) -> None:
    val = container.get(key)
    if val is not None:
        if isinstance(val, bool) or not isinstance(val, types) or val < 0:
            _raise_validation_error(key, context, "must be 0 or more")


def _validate_choice(
    container: Mapping[str, Any], key: str, context: str, choices: Sequence[str]
) -> None:
    val = container.get(key)
    if val is not None and val not in choices:
        _raise_validation_error(key, context, f"must be one of: {', '.join(choices)}")


def _validate_optional_text(container: Mapping[str, Any], key: str, context: str) -> None:
    val = container.get(key)
    if val is not None and not isinstance(val, str):
        _raise_validation_error(key, context, "must be text or nothing")


def _section(config, name):
    section = config.get(name)
    if not isinstance(section, dict):
        raise InvalidConfigError(f"'{name}' section must be a dictionary.")
    return section


def _validate_logging_section(config):
    logging_conf = _section(config, 'logging')
    level = logging_conf.get('level')
    if isinstance(level, str):
        logging_conf['level'] = level = level.upper()
    _validate_choice(logging_conf, 'level', 'logging', LOG_LEVELS)


def _validate_program_section(config):
    _validate_optional_text(_section(config, 'program'), 'path', 'program')


def _validate_database_section(config):
    database = _section(config, 'database')
    _validate_optional_text(database, 'path', 'database')
    _validate_choice(database, 'format', 'database', DB_FORMATS)
    _validate_choice(database, 'indexer', 'database', INDEXERS)
    _validate_bool(database, 'skeleton_prefilter', 'database')


def _validate_engine_section(config):
    engine = _section(config, 'engine')
    _validate_bool(engine, 'occurs_check', 'engine')
    _validate_count(engine, 'max_answers', 'engine')


def _validate_neural_section(config):
    """Learned-index settings; the numeric ranges mirror ``TrainConfig``."""
    neural = _section(config, 'neural')
    _validate_count(neural, 'hidden_size', 'neural')
    _validate_count(neural, 'epochs', 'neural')

    rate = neural.get('learning_rate')
    if rate is not None and (
        isinstance(rate, bool) or not isinstance(rate, (int, float)) or rate <= 0
    ):
        _raise_validation_error('learning_rate', 'neural', "must be more than 0")

    threshold = neural.get('threshold')
    if threshold is not None and (
        isinstance(threshold, bool)
        or not isinstance(threshold, (int, float))
        or not 0 < threshold < 1
    ):
        _raise_validation_error('threshold', 'neural', "must be between 0 and 1")

    seed = neural.get('seed')
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        _raise_validation_error('seed', 'neural', "must be a whole number")

    _validate_choice(neural, 'optimizer', 'neural', OPTIMIZERS)
    _validate_optional_text(neural, 'model_path', 'neural')


def _validate_output_section(config):
    output_conf = _section(config, 'output')
    _validate_bool(output_conf, 'timing', 'output')
    _validate_bool(output_conf, 'show_goal', 'output')


def validate_config(
    config: dict,
    defaults: Mapping[str, Any] = DEFAULT_CONFIG,
) -> None:
    """Fill in missing settings from ``defaults`` and check every section.

    ``config`` is changed in place; log levels are upper-cased. The first
    bad value raises :class:`InvalidConfigError` naming ``section.key``.
    """
    if not isinstance(config, dict):
        raise InvalidConfigError("Configuration must be a dictionary.")

    if defaults:
        def apply_defaults(cfg, defs):
            for key, value in defs.items():
                if isinstance(value, dict):
                    if key not in cfg or cfg[key] is None:
                        cfg[key] = {}
                    node = cfg[key]
                    if isinstance(node, dict):
                        apply_defaults(node, value)
                elif key not in cfg:
                    # Use deepcopy so later edits never reach DEFAULT_CONFIG.
                    cfg[key] = copy.deepcopy(value)

        apply_defaults(config, defaults)

    _validate_logging_section(config)
    _validate_program_section(config)
    _validate_database_section(config)
    _validate_engine_section(config)
    _validate_neural_section(config)
    _validate_output_section(config)


def load_and_validate_config(
    config_file_path: str | Path,
    defaults: Mapping[str, Any] = DEFAULT_CONFIG,
) -> dict:
    """Load a YAML config file and merge it over ``defaults``."""
    config = load_yaml_config(config_file_path)
    validate_config(config, defaults=defaults)
    return config


def find_default_config(folder: str | Path = '.') -> Path | None:
    """Return the first ``natlog.yml``/``natlog.yaml`` found in ``folder``."""
    for name in DEFAULT_CONFIG_FILENAMES:
        candidate = Path(folder) / name
        if candidate.is_file():
            return candidate
    return None


class _SilentProgress:
    """Fallback progress handler used when tqdm is unavailable or disabled."""

    def __init__(self, iterable=None):
        self.iterable = iterable or []

    def __iter__(self):
        yield from self.iterable

    def update(self, *_args, **_kwargs):
        return None

    def set_postfix(self, ordered_dict=None, refresh=True, **kwargs):
        return None

    def close(self):
        return None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def _progress_enabled() -> bool:
    """Return ``True`` when progress bars should be displayed."""
    if logging.getLogger().getEffectiveLevel() <= logging.DEBUG:
        return False
    if os.getenv("CI"):
        return False
    return True


def _progress_bar(iterable=None, *, enabled=True, **kwargs):
    """Return a progress iterator/context manager with graceful fallback."""
    if enabled:
        try:
            from tqdm import tqdm as _tqdm
            return _tqdm(iterable, **kwargs)
        except ImportError:
            pass
    return _SilentProgress(iterable)
