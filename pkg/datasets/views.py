from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from core.errors import InsufficientDataError, ParameterError, ShapeError
from core.simplex import as_float_array


@dataclass(frozen=True)
class UnlabeledView:
    """
    Label-free view of a dataset handed to the adaptation driver.

    Holds inputs only; there is no attribute through which labels can be reached.
    """

    __slots__ = ("inputs", "num_classes", "domain")

    inputs: NDArray[np.float64]
    num_classes: int
    domain: str

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


class LabeledDataset:
    """
    Inputs with class labels in [0, C).

    Attributes:
        inputs: N x d finite inputs.
        labels: N integer labels.
        num_classes: C.
        domain: Domain tag ("source", "target", a file name, ...).
        seed: Seed the data was generated with, -1 for loaded tables.
    """

    def __init__(self, inputs, labels, num_classes: int, domain: str = "", seed: int = -1):
        x = as_float_array(inputs, "inputs")
        y = np.asarray(labels)
        if x.ndim != 2:
            raise ShapeError(f"inputs must be an N x d matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ShapeError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise ParameterError(f"labels must be integers, got dtype {y.dtype}")
        if num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {num_classes}")
        y = y.astype(np.int64)
        if np.any(y < 0) or np.any(y >= num_classes):
            raise ParameterError(f"labels must lie in 0..{num_classes - 1}")
        self.inputs = x
        self.labels = y
        self.num_classes = num_classes
        self.domain = domain
        self.seed = seed

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def class_counts(self) -> NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.num_classes)

    def check_coverage(self) -> None:
        """
        Training-time requirements: N >= 2C and every class present.

        Raises:
            InsufficientDataError: If either requirement fails.
        """
        if self.size < 2 * self.num_classes:
            raise InsufficientDataError(f"{self.domain or 'dataset'} has {self.size} samples, needs at least {2 * self.num_classes}")
        missing = np.flatnonzero(self.class_counts() == 0)
        if missing.size:
            raise InsufficientDataError(f"{self.domain or 'dataset'} has no samples of classes {missing.tolist()}")

    def without_labels(self) -> UnlabeledView:
        inputs = self.inputs.copy()
        inputs.setflags(write=False)
        return UnlabeledView(inputs=inputs, num_classes=self.num_classes, domain=self.domain)

    def equals(self, other: "LabeledDataset") -> bool:
        """Bit-exact equality of inputs, labels and class count."""
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self) -> str:
        return f"LabeledDataset(domain={self.domain!r}, N={self.size}, d={self.dim}, C={self.num_classes})"
