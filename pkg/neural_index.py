"""A learned indexer for ground fact databases.

A small multi-layer perceptron is trained to map the multi-hot encoding of
a set of constants to the multi-hot encoding of the facts containing them.
The training set has one row per constant: the identity matrix as input
and the constant's occurrence set as the target. The trained network then
stands in for :meth:`ground_db.FactDb.ground_match_of`; the engine still
checks every candidate by unification, so wrong guesses cannot produce
wrong answers.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Protocol

import numpy as np

from ground_db import FactDb
from term import const_of, constant_sort_key
from utils import (
    OPTIMIZERS,
    InvalidConfigError,
    NatlogError,
    _progress_bar,
    _progress_enabled,
)

MODEL_FORMAT_VERSION = 1
_EPS = 1e-12


class EmptyDb(NatlogError):
    """Raised when training is asked for a database without facts."""


class DivergedLoss(NatlogError):
    """Raised when the training loss stops being a finite number."""


class ModelNotTrained(NatlogError):
    """Raised when a learned index is queried before training or loading a model."""


class ModelFormatError(NatlogError):
    """Raised when a saved model cannot be used with the current database."""


@dataclass
class TrainConfig:
    # 0 picks max(16, facts, constants) when the network is built.
    hidden_size: int = 0
    epochs: int = 2000
    learning_rate: float = 0.05
    seed: int = 42
    threshold: float = 0.5
    optimizer: str = 'adam'

    def __post_init__(self):
        if self.hidden_size < 0:
            raise InvalidConfigError("'neural.hidden_size' must be 0 or more.")
        if self.epochs < 0:
            raise InvalidConfigError("'neural.epochs' must be 0 or more.")
        if not self.learning_rate > 0:
            raise InvalidConfigError("'neural.learning_rate' must be more than 0.")
        if not 0 < self.threshold < 1:
            raise InvalidConfigError("'neural.threshold' must be between 0 and 1.")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfigError(
                f"'neural.optimizer' must be one of: {', '.join(OPTIMIZERS)}."
            )

    @classmethod
    def from_config(cls, neural_conf: dict) -> 'TrainConfig':
        """Build a TrainConfig from the ``neural`` section of a validated config."""
        return cls(
            hidden_size=neural_conf.get('hidden_size', 0),
            epochs=neural_conf.get('epochs', 2000),
            learning_rate=float(neural_conf.get('learning_rate', 0.05)),
            seed=neural_conf.get('seed', 42),
            threshold=float(neural_conf.get('threshold', 0.5)),
            optimizer=neural_conf.get('optimizer', 'adam'),
        )

    def hidden_for(self, nconst: int, nfacts: int) -> int:
        return self.hidden_size or max(16, nfacts, nconst)


class Vocab:
    """The distinct constants of a database; position = input feature."""

    def __init__(self, constants: Iterable):
        self.constants = sorted(constants, key=constant_sort_key)
        self.positions = {c: i for i, c in enumerate(self.constants)}

    def __len__(self):
        return len(self.constants)

    def __contains__(self, c):
        return c in self.positions

    def __getitem__(self, i):
        return self.constants[i]

    def digest(self) -> str:
        text = '\x1f'.join(f"{type(c).__name__}:{c!r}" for c in self.constants)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()


def encode_constants(vocab: Vocab, cs: Iterable) -> np.ndarray:
    """Multi-hot vector with 1.0 at the position of each known constant of ``cs``."""
    x = np.zeros(len(vocab))
    for c in cs:
        i = vocab.positions.get(c)
        if i is not None:
            x[i] = 1.0
    return x


def build_training_set(db: FactDb, vocab: Vocab) -> tuple[np.ndarray, np.ndarray]:
    """Return the identity input matrix and per-constant fact targets."""
    if not len(db):
        raise EmptyDb("cannot train a learned index on an empty database")
    X = np.eye(len(vocab))
    y = np.zeros((len(vocab), len(db)))
    for k, c in enumerate(vocab.constants):
        y[k, sorted(db.const_index[c])] = 1.0
    return X, y


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form stays finite for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Mlp:
    """One hidden layer, logistic hidden and output units.

    ``W1`` is ``hidden x inputs`` and ``W2`` is ``outputs x hidden``; inputs
    are fed as rows.
    """

    def __init__(self, n_inputs: int, n_hidden: int, n_outputs: int, seed: int = 42):
        rng = np.random.default_rng(seed)
        self.W1 = rng.normal(0.0, 1.0 / np.sqrt(max(n_inputs, 1)), (n_hidden, n_inputs))
        self.b1 = np.zeros(n_hidden)
        self.W2 = rng.normal(0.0, 1.0 / np.sqrt(max(n_hidden, 1)), (n_outputs, n_hidden))
        self.b2 = np.zeros(n_outputs)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {'W1': self.W1, 'b1': self.b1, 'W2': self.W2, 'b2': self.b2}

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        H = sigmoid(X @ self.W1.T + self.b1)
        P = sigmoid(H @ self.W2.T + self.b2)
        return H, P

    def loss(self, X: np.ndarray, y: np.ndarray) -> float:
        _, P = self.forward(X)
        return bce_loss(P, y)

    def loss_and_gradients(self, X: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
        """Mean binary cross-entropy over all outputs and its parameter gradients."""
        H, P = self.forward(X)
        dZ2 = (P - y) / y.size
        dH = dZ2 @ self.W2
        dZ1 = dH * H * (1.0 - H)
        grads = {
            'W1': dZ1.T @ X,
            'b1': dZ1.sum(axis=0),
            'W2': dZ2.T @ H,
            'b2': dZ2.sum(axis=0),
        }
        return bce_loss(P, y), grads


def bce_loss(P: np.ndarray, y: np.ndarray) -> float:
    P = np.clip(P, _EPS, 1.0 - _EPS)
    return float(-np.mean(y * np.log(P) + (1.0 - y) * np.log(1.0 - P)))


def predict(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Output probabilities for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    _, P = mlp.forward(np.atleast_2d(x))
    return P[0] if x.ndim == 1 else P


def fit(mlp: Mlp, X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> float:
    """Full-batch training for ``cfg.epochs`` epochs; returns the final loss."""
    params = mlp.params
    use_adam = cfg.optimizer == 'adam'
    if use_adam:
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        m = {k: np.zeros_like(v) for k, v in params.items()}
        v2 = {k: np.zeros_like(v) for k, v in params.items()}

    loss = mlp.loss(X, y)
    bar = _progress_bar(
        range(cfg.epochs),
        enabled=_progress_enabled() and cfg.epochs > 0,
        desc="Training index",
        unit="epoch",
        leave=False,
    )
    with bar:
        for epoch in bar:
            loss, grads = mlp.loss_and_gradients(X, y)
            if not np.isfinite(loss):
                raise DivergedLoss(f"training loss became {loss} at epoch {epoch}")
            step = epoch + 1
            for k, p in params.items():
                g = grads[k]
                if use_adam:
                    m[k] = beta1 * m[k] + (1 - beta1) * g
                    v2[k] = beta2 * v2[k] + (1 - beta2) * g * g
                    m_hat = m[k] / (1 - beta1 ** step)
                    v_hat = v2[k] / (1 - beta2 ** step)
                    p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
                else:
                    p -= cfg.learning_rate * g
            if step % 100 == 0:
                bar.set_postfix(loss=f"{loss:.5f}")
                logging.debug("epoch %d: loss %.6f", step, loss)
        if cfg.epochs:
            loss = mlp.loss(X, y)
    if not np.isfinite(loss):
        raise DivergedLoss(f"training loss became {loss}")
    return loss


class Learner(Protocol):
    """A trainable multi-label classifier usable as a learned index."""

    def fit(self, X: np.ndarray, y: np.ndarray) -> float:
        ...

    def predict(self, X: np.ndarray) -> np.ndarray:
        ...


class MlpLearner:
    """The built-in :class:`Mlp` behind the :class:`Learner` protocol."""

    def __init__(self, config: TrainConfig | None = None):
        self.config = config or TrainConfig()
        self.mlp: Mlp | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> float:
        cfg = self.config
        hidden = cfg.hidden_for(X.shape[1], y.shape[1])
        self.mlp = Mlp(X.shape[1], hidden, y.shape[1], seed=cfg.seed)
        return fit(self.mlp, X, y, cfg)

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.mlp is None:
            raise ModelNotTrained("the network has not been trained")
        return predict(self.mlp, X)


class NeuralDb(FactDb):
    """A fact database whose candidate facts come from a trained classifier.

    Call :meth:`train` (or :meth:`load_model`) once all facts are added.
    """

    def __init__(self, config: TrainConfig | None = None,
                 learner: Learner | None = None, prefilter: bool = False):
        super().__init__('const', prefilter)
        self.config = config or TrainConfig()
        self.learner: Learner = learner if learner is not None else MlpLearner(self.config)
        self.vocab: Vocab | None = None
        self.final_loss: float | None = None
        self._trained_size = -1

    def add_fact(self, fact: Any) -> int:
        fid = super().add_fact(fact)
        self._trained_size = -1
        return fid

    @property
    def trained(self) -> bool:
        return self._trained_size == len(self.facts)

    def train(self) -> float:
        """Fit the learner on this database's index; return the final loss."""
        vocab = Vocab(self.const_index)
        X, y = build_training_set(self, vocab)
        logging.info(
            "Training learned index: %d constants, %d facts.", len(vocab), len(self.facts)
        )
        loss = self.learner.fit(X, y)
        self.vocab = vocab
        self.final_loss = loss
        self._trained_size = len(self.facts)
        logging.info("Learned index trained, final loss %.6f.", loss)
        return loss

    def ground_match_of(self, query: Any) -> list[int]:
        """Candidate ids predicted for the constants of ``query``, ascending.

        Queries without constants match every fact; a constant unknown to the
        database matches none.
        """
        if not self.trained:
            raise ModelNotTrained("train or load a model before querying the learned index")
        constants = const_of(query)
        if not constants:
            return self.all_ids()
        if any(c not in self.vocab for c in constants):
            return []
        x = encode_constants(self.vocab, constants)
        probs = np.asarray(self.learner.predict(x[None, :]))[0]
        return np.flatnonzero(probs > self.config.threshold).tolist()

    def save_model(self, path: str | Path) -> Path:
        """Write the trained network and a versioned JSON header to a ``.npz`` file."""
        if not self.trained:
            raise ModelNotTrained("nothing to save: the learned index is not trained")
        mlp = getattr(self.learner, 'mlp', None)
        if not isinstance(mlp, Mlp):
            raise ModelFormatError("only the built-in network can be saved")
        path = Path(path)
        if path.suffix != '.npz':
            path = path.with_name(path.name + '.npz')
        n_in, n_hidden, n_out = mlp.shape
        header = {
            'format_version': MODEL_FORMAT_VERSION,
            'inputs': n_in,
            'hidden': n_hidden,
            'outputs': n_out,
            'seed': self.config.seed,
            'threshold': self.config.threshold,
            'final_loss': self.final_loss,
            'vocab_digest': self.vocab.digest(),
        }
        np.savez(path, header=np.array(json.dumps(header)), **mlp.params)
        logging.info("Saved learned index model to %s", path)
        return path

    def load_model(self, path: str | Path) -> None:
        """Load a network saved by :meth:`save_model` for this same database."""
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data['header']))
                arrays = {k: np.array(data[k]) for k in ('W1', 'b1', 'W2', 'b2')}
        except FileNotFoundError:
            raise
        except (OSError, KeyError, ValueError) as e:
            raise ModelFormatError(f"{path}: not a learned index model ({e})") from e

        if header.get('format_version') != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"{path}: unsupported model format {header.get('format_version')!r}"
            )
        vocab = Vocab(self.const_index)
        if header.get('vocab_digest') != vocab.digest() or header.get('outputs') != len(self.facts):
            raise ModelFormatError(f"{path}: model was trained on a different database")
        W1, W2 = arrays['W1'], arrays['W2']
        if W1.shape != (header['hidden'], header['inputs']) or W2.shape != (
            header['outputs'], header['hidden']
        ):
            raise ModelFormatError(f"{path}: weight shapes do not match the header")

        mlp = Mlp(header['inputs'], header['hidden'], header['outputs'])
        mlp.W1, mlp.b1, mlp.W2, mlp.b2 = W1, arrays['b1'], W2, arrays['b2']
        learner = MlpLearner(self.config)
        learner.mlp = mlp
        self.learner = learner
        self.config.threshold = float(header.get('threshold', self.config.threshold))
        self.vocab = vocab
        self.final_loss = header.get('final_loss')
        self._trained_size = len(self.facts)
        logging.info("Loaded learned index model from %s", path)
