"""Core data model: datasets, variable groups, projections, fold splits, seeds.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared freely across worker processes. Column indices are 0-based
everywhere. Randomness is always requested through :func:`derive_seed`, which
splits one master seed into independent, reproducible streams.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import EmptyGroup, IndexOutOfRange, OverlappingGroups

REGRESSION = "regression"
BINARY = "binary"
TASKS = (REGRESSION, BINARY)

_SEED_MASK = (1 << 64) - 1


def derive_seed(master, purpose, index=0):
    """Derive an independent 64-bit seed from a master seed.

    Hashes ``(master, purpose, index)`` with BLAKE2b, so distinct purposes or
    indices give unrelated streams and repeated calls are identical.

    Parameters
    ----------
    master : int
        The experiment-level seed.
    purpose : str
        A label naming the consumer, e.g. ``"learner"`` or ``"permute"``.
    index : int, default=0
        Position within the stream (fold id, run id, permutation id, ...).

    Returns
    -------
    int
        An unsigned 64-bit seed.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update((int(master) & _SEED_MASK).to_bytes(8, "little"))
    h.update(str(purpose).encode("utf-8"))
    h.update(b"\x00")
    h.update(int(index).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def _frozen_array(values, dtype=None):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """A design matrix paired with its outcome vector.

    Parameters
    ----------
    x : ndarray of shape (n_samples, n_features)
        Finite feature values.
    y : ndarray of shape (n_samples,)
        Continuous outcome, or {0, 1} labels for the binary task.
    task : {"regression", "binary"}
        Which loss family applies downstream.
    """

    x: np.ndarray
    y: np.ndarray
    task: str = REGRESSION

    def __post_init__(self):
        x = _frozen_array(self.x, dtype=float)
        y = _frozen_array(self.y, dtype=float)
        if x.ndim != 2:
            raise ValueError("x must be a 2-d matrix")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("y length must equal the number of rows of x")
        if not np.isfinite(x).all():
            raise ValueError("x contains non-finite entries")
        if not np.isfinite(y).all():
            raise ValueError("y contains non-finite entries")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == BINARY and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("binary task requires y entries in {0, 1}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self):
        return self.x.shape[0]

    @property
    def n_features(self):
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class GroupSpec:
    """A partition of column indices into named variable groups.

    Groups must be disjoint and non-empty but need not cover every column;
    uncovered columns act as a passive remainder that conditional models may
    still condition on.
    """

    groups: tuple
    names: tuple = None

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        names = self.names
        if names is None:
            names = tuple(f"G{k}" for k in range(len(groups)))
        names = tuple(str(n) for n in names)
        if len(names) != len(groups):
            raise ValueError("need exactly one name per group")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "names", names)

    @classmethod
    def contiguous_blocks(cls, n_blocks, block_size, names=None):
        """Blocks of consecutive columns: [0..b), [b..2b), ..."""
        groups = [
            list(range(k * block_size, (k + 1) * block_size)) for k in range(n_blocks)
        ]
        return cls(groups=groups, names=names)

    @property
    def n_groups(self):
        return len(self.groups)

    def covered(self):
        """All column indices claimed by some group, sorted."""
        return sorted(i for g in self.groups for i in g)

    def uncovered(self, p):
        """Column indices of the passive remainder, sorted."""
        taken = set(self.covered())
        return [i for i in range(p) if i not in taken]


def validate_group_spec(spec, p):
    """Check a :class:`GroupSpec` against a design with ``p`` columns.

    Raises
    ------
    EmptyGroup, IndexOutOfRange, OverlappingGroups
        Naming the first offending group.
    """
    if spec.n_groups < 1:
        raise EmptyGroup("group specification contains no groups")
    seen = {}
    for k, group in enumerate(spec.groups):
        name = spec.names[k]
        if len(group) == 0:
            raise EmptyGroup(f"group {k} ({name!r}) is empty")
        for idx in group:
            if idx < 0 or idx >= p:
                raise IndexOutOfRange(
                    f"group {k} ({name!r}) references column {idx}, "
                    f"but the design has {p} columns"
                )
            if idx in seen:
                raise OverlappingGroups(
                    f"column {idx} appears in both group {seen[idx]} and group {k}"
                )
            seen[idx] = k


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    """Per-group linear projections, one matrix of shape (|G_k|, d_k) each."""

    matrices: tuple

    def __post_init__(self):
        mats = tuple(_frozen_array(m, dtype=float) for m in self.matrices)
        for k, m in enumerate(mats):
            if m.ndim != 2:
                raise ValueError(f"projection {k} must be 2-d")
            if m.shape[1] < 1 or m.shape[1] > m.shape[0]:
                raise ValueError(
                    f"projection {k} maps {m.shape[0]} columns to {m.shape[1]}; "
                    "the projected dimension must lie in [1, group size]"
                )
            if not np.isfinite(m).all():
                raise ValueError(f"projection {k} contains non-finite entries")
        object.__setattr__(self, "matrices", mats)

    @property
    def dims(self):
        """Projected dimension d_k of each group."""
        return tuple(m.shape[1] for m in self.matrices)

    @property
    def total_dim(self):
        return sum(self.dims)


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Deterministic 2-fold assignment used for cross-fitting.

    The assignment is a pure function of ``(n, master_seed)``; fold sizes
    differ by at most one.
    """

    folds: np.ndarray
    master_seed: int

    N_FOLDS = 2

    def __post_init__(self):
        object.__setattr__(self, "folds", _frozen_array(self.folds, dtype=np.int64))

    @classmethod
    def make(cls, n, master_seed):
        if n < cls.N_FOLDS:
            raise ValueError(f"need at least {cls.N_FOLDS} samples to split")
        rng = np.random.default_rng(derive_seed(master_seed, "fold-split"))
        order = rng.permutation(n)
        folds = np.empty(n, dtype=np.int64)
        half = (n + 1) // 2
        folds[order[:half]] = 0
        folds[order[half:]] = 1
        return cls(folds=folds, master_seed=int(master_seed))

    def test_index(self, fold):
        return np.flatnonzero(self.folds == fold)

    def train_index(self, fold):
        return np.flatnonzero(self.folds != fold)


# ---------------------------------------------------------------------------
# File formats: CSV datasets, JSON group specifications.


def save_dataset_csv(dataset, path, outcome_column="y"):
    """Write a dataset as CSV with header row x0..x{p-1} plus the outcome.

    Floats are written with 17 significant digits so reading the file back
    reproduces every value bit for bit.
    """
    frame = pd.DataFrame(
        np.asarray(dataset.x), columns=[f"x{j}" for j in range(dataset.n_features)]
    )
    frame[outcome_column] = np.asarray(dataset.y)
    frame.to_csv(path, index=False, float_format="%.17g")


def load_dataset_csv(path, outcome_column="y", task=None):
    """Read a CSV dataset, designating one column as the outcome.

    When ``task`` is None it is inferred: an outcome taking only values in
    {0, 1} is treated as binary, anything else as regression.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    if outcome_column not in frame.columns:
        raise ValueError(f"outcome column {outcome_column!r} not found in {path}")
    y = frame[outcome_column].to_numpy(dtype=float)
    x = frame.drop(columns=[outcome_column]).to_numpy(dtype=float)
    if task is None:
        task = BINARY if np.isin(y, (0.0, 1.0)).all() and y.size else REGRESSION
    return Dataset(x=x, y=y, task=task)


def save_groups_json(spec, path):
    payload = {"groups": [list(g) for g in spec.groups], "names": list(spec.names)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_groups_json(path):
    with open(path) as fh:
        payload = json.load(fh)
    return GroupSpec(groups=payload["groups"], names=payload.get("names"))
