"""Deterministic useful-work backends: mini SGD trainer and hash-chain surrogate.

The trainer realizes one proof stage: ``tau`` epochs of sequential mini-batch
SGD on a fixed dataset, where each epoch's shuffle is driven by a sub-seed of
the stage seed. Weights are quantized to a fixed binary precision (multiples
of 2**-32) after every batch update so summaries of the weight vector are
bit-stable, making stage recomputation byte-exact.

Protocol semantics: the batch parameter counts *batches per epoch*, not
samples per batch; the shuffled dataset is split into that many batches.

The surrogate backend replaces training with iterated hashing. It is used by
the large-scale simulator where stage outcomes are realized statistically and
only the digests matter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .hashing import sha256, shuffle, subseed

_QUANT = 2.0 ** 32


class TrainingDivergedError(ArithmeticError):
    """A weight became non-finite during a stage; the task is unrecoverable."""


class ShapeError(ValueError):
    """Operand dimensions are inconsistent."""


# ---------------------------------------------------------------------------
# Datasets and task specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Regression dataset: feature matrix ``x`` (n, d) and targets ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    def to_bytes(self) -> bytes:
        n, d = self.x.shape
        header = n.to_bytes(4, "big") + d.to_bytes(4, "big")
        body = self.x.astype(">f8").tobytes() + self.y.astype(">f8").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Dataset":
        n = int.from_bytes(raw[0:4], "big")
        d = int.from_bytes(raw[4:8], "big")
        x_end = 8 + n * d * 8
        x = np.frombuffer(raw[8:x_end], dtype=">f8").reshape(n, d).astype(np.float64)
        y = np.frombuffer(raw[x_end : x_end + n * 8], dtype=">f8").astype(np.float64)
        return cls(x=x, y=y)


@dataclass(frozen=True)
class MLTaskSpec:
    """A machine-learning useful-work task.

    ``epochs`` must be a multiple of ``epochs_per_stage``; the stage count is
    their quotient. ``batches`` is the number of batches each epoch's shuffled
    dataset is divided into.
    """

    dataset_id: str
    n_samples: int
    w0: tuple[float, ...]
    eta: float
    batches: int
    epochs: int
    epochs_per_stage: int
    loss: str = "mse"

    def __post_init__(self):
        if self.epochs % self.epochs_per_stage != 0:
            raise ValueError("epochs must be a multiple of epochs_per_stage")
        if self.stages < 1:
            raise ValueError("task must have at least one stage")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if self.n_samples < self.batches:
            raise ValueError("need at least one sample per batch")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss: {self.loss}")

    @property
    def stages(self) -> int:
        return self.epochs // self.epochs_per_stage

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "ml",
                "dataset_id": self.dataset_id,
                "n_samples": self.n_samples,
                "w0": list(self.w0),
                "eta": self.eta,
                "batches": self.batches,
                "epochs": self.epochs,
                "epochs_per_stage": self.epochs_per_stage,
                "loss": self.loss,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    def to_bytes(self) -> bytes:
        return self.to_json().encode()

    @classmethod
    def from_json(cls, text: str) -> "MLTaskSpec":
        raw = json.loads(text)
        if raw.get("kind") != "ml":
            raise ValueError("not an ML task spec")
        return cls(
            dataset_id=raw["dataset_id"],
            n_samples=raw["n_samples"],
            w0=tuple(raw["w0"]),
            eta=raw["eta"],
            batches=raw["batches"],
            epochs=raw["epochs"],
            epochs_per_stage=raw["epochs_per_stage"],
            loss=raw.get("loss", "mse"),
        )


# ---------------------------------------------------------------------------
# Weight vectors
# ---------------------------------------------------------------------------

def quantize(w: np.ndarray) -> np.ndarray:
    """Snap weights to the fixed grid of multiples of 2**-32."""
    return np.rint(w * _QUANT) / _QUANT


def weights_to_bytes(w: np.ndarray) -> bytes:
    return len(w).to_bytes(4, "big") + np.asarray(w, dtype=np.float64).astype(">f8").tobytes()


def weights_from_bytes(raw: bytes) -> np.ndarray:
    n = int.from_bytes(raw[:4], "big")
    return np.frombuffer(raw[4 : 4 + 8 * n], dtype=">f8").astype(np.float64)


def weight_summary(w: np.ndarray) -> bytes:
    """Digest of the serialized (quantized) weight vector."""
    return sha256(weights_to_bytes(w))


def mse_loss(dataset: Dataset, w: np.ndarray) -> float:
    residual = dataset.x @ w - dataset.y
    return float(np.mean(residual * residual))


# ---------------------------------------------------------------------------
# Stage training
# ---------------------------------------------------------------------------

def train_stage(
    spec: MLTaskSpec, w_in: np.ndarray, seed: int, dataset: Dataset
) -> np.ndarray:
    """Run one proof stage: ``epochs_per_stage`` epochs of seeded-shuffle SGD.

    Epoch ``e`` (1-based within the stage) shuffles the dataset with
    ``subseed(seed, e)``, splits it into ``spec.batches`` contiguous batches
    and applies sequential MSE gradient steps. Deterministic in all inputs.
    """
    if len(w_in) != len(spec.w0):
        raise ShapeError("weight vector length does not match task spec")
    if dataset.n_samples != spec.n_samples:
        raise ShapeError("dataset size does not match task spec")
    w = quantize(np.asarray(w_in, dtype=np.float64).copy())
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, spec.epochs_per_stage + 1):
            order = np.asarray(shuffle(spec.n_samples, subseed(seed, epoch)), dtype=np.intp)
            for batch in np.array_split(order, spec.batches):
                xb = dataset.x[batch]
                yb = dataset.y[batch]
                grad = (2.0 / len(batch)) * (xb.T @ (xb @ w - yb))
                w = quantize(w - spec.eta * grad)
                if not np.all(np.isfinite(w)):
                    raise TrainingDivergedError("non-finite weight encountered")
    return w


def surrogate_stage(w_in: bytes, seed: int, tau: int, work_units: int = 1) -> bytes:
    """Iterated-hash stand-in for a training stage.

    ``work_units`` rounds of ``digest = sha256(digest || seed)`` starting from
    the 32-byte input digest.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if work_units < 1:
        raise ValueError("work_units must be >= 1")
    seed_bytes = seed.to_bytes(8, "big")
    digest = w_in
    for _ in range(work_units):
        digest = sha256(digest + seed_bytes)
    return digest


# ---------------------------------------------------------------------------
# Repo-fixed reference task
# ---------------------------------------------------------------------------

def make_reference_dataset(n_samples: int = 64, n_features: int = 3, seed: int = 2718) -> Dataset:
    """Synthetic linear-regression data, generated from a splitmix64 stream.

    Column 0 is a constant intercept feature; targets are a fixed linear
    combination plus small deterministic noise.
    """
    from .hashing import Prng

    prng = Prng(seed)
    x = np.ones((n_samples, n_features))
    for i in range(n_samples):
        for j in range(1, n_features):
            x[i, j] = 2.0 * prng.uniform() - 1.0
    true_w = np.array([0.5] + [(-1.0) ** j * (1.0 + 0.25 * j) for j in range(1, n_features)])
    noise = np.array([0.05 * (2.0 * prng.uniform() - 1.0) for _ in range(n_samples)])
    y = x @ true_w + noise
    return Dataset(x=x, y=y)


@dataclass(frozen=True)
class ReferenceTask:
    """A dataset plus matching spec, ready for protocol tests."""

    spec: MLTaskSpec
    dataset: Dataset


def make_reference_task(
    epochs: int = 8,
    epochs_per_stage: int = 2,
    n_samples: int = 64,
    batches: int = 8,
    eta: float = 0.05,
    dataset_seed: int = 2718,
) -> ReferenceTask:
    dataset = make_reference_dataset(n_samples=n_samples, seed=dataset_seed)
    dataset_id = sha256(dataset.to_bytes()).hex()
    spec = MLTaskSpec(
        dataset_id=dataset_id,
        n_samples=n_samples,
        w0=(0.0,) * dataset.x.shape[1],
        eta=eta,
        batches=batches,
        epochs=epochs,
        epochs_per_stage=epochs_per_stage,
    )
    return ReferenceTask(spec=spec, dataset=dataset)
