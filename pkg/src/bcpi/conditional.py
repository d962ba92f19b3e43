"""Conditional and standard permutation of variable groups.

A group is rebuilt so that its dependence on the remaining columns survives
while its independent part is scrambled: a random forest predicts the group
from everything else, and either the residuals are jointly re-shuffled and
added back (additive mode) or replacements are drawn from the forest's own
leaves (leaf-sampling mode). One shared row permutation (or one shared draw
per row) is used across all of a group's columns, so within-group dependence
is preserved too.

The sampler is fit on the same held-out fold it later reconstructs; the base
learner being audited never sees that fold.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyConditioningSet
from .learners import ForestConfig, build_forest
from .types import REGRESSION, derive_seed

ADDITIVE = "additive"
LEAF_SAMPLING = "leaf-sampling"

#: deeper leaves would make leaf-sampling degenerate, hence the default of 5
DEFAULT_CONDITIONAL_FOREST = ForestConfig(min_samples_leaf=5)


@dataclass(eq=False)
class ConditionalSampler:
    """A fitted model of one group given the remaining columns."""

    group_id: int
    group_cols: np.ndarray
    rest_cols: np.ndarray
    mode: str
    forest: object
    x_group: np.ndarray
    predictions: np.ndarray
    residuals: np.ndarray
    leaf_ids: np.ndarray = None
    leaf_members: list = None

    @property
    def n_rows(self):
        return self.x_group.shape[0]


def fit_conditional(x, spec, j, mode=ADDITIVE, forest_cfg=None, seed=0):
    """Fit the group-j conditional model on the given (held-out) matrix.

    Parameters
    ----------
    x : ndarray of shape (n, p)
        The inference fold.
    spec : GroupSpec
    j : int
        Index of the group of interest.
    mode : {"additive", "leaf-sampling"}
    forest_cfg : ForestConfig, optional
        Defaults to 100 trees with min_samples_leaf=5.
    seed : int

    Raises
    ------
    EmptyConditioningSet
        When the group covers every column, leaving nothing to condition on.
    """
    x = np.asarray(x, dtype=float)
    if mode not in (ADDITIVE, LEAF_SAMPLING):
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    cols = np.asarray(spec.groups[j], dtype=int)
    in_group = np.zeros(x.shape[1], dtype=bool)
    in_group[cols] = True
    rest = np.flatnonzero(~in_group)
    if rest.size == 0:
        raise EmptyConditioningSet(
            f"group {j} ({spec.names[j]!r}) covers all columns; conditional "
            "importance is undefined for a single all-covering group"
        )
    cfg = forest_cfg if forest_cfg is not None else DEFAULT_CONDITIONAL_FOREST
    forest = build_forest(cfg, rest.size, REGRESSION, derive_seed(seed, "cond-forest"))
    x_rest = x[:, rest]
    x_group = x[:, cols]
    target = x_group[:, 0] if cols.size == 1 else x_group
    forest.fit(x_rest, target)
    # in-sample predictions on the fitting fold: the partial memorization keeps
    # the reconstruction close to the observed group, which is what preserves
    # type-I control under strong correlation (out-of-bag predictions trade
    # that for power and measurably inflate the false positive rate)
    predictions = forest.predict(x_rest).reshape(x.shape[0], cols.size)

    leaf_ids = None
    leaf_members = None
    if mode == LEAF_SAMPLING:
        leaf_ids = forest.apply(x_rest)
        leaf_members = []
        for t in range(leaf_ids.shape[1]):
            members = {}
            for row, leaf in enumerate(leaf_ids[:, t]):
                members.setdefault(int(leaf), []).append(row)
            leaf_members.append(
                {leaf: np.asarray(rows) for leaf, rows in members.items()}
            )

    return ConditionalSampler(
        group_id=j,
        group_cols=cols,
        rest_cols=rest,
        mode=mode,
        forest=forest,
        x_group=x_group,
        predictions=predictions,
        residuals=x_group - predictions,
        leaf_ids=leaf_ids,
        leaf_members=leaf_members,
    )


def reconstruct(sampler, b, seed):
    """One rebuilt copy of the group, shape (n, |J|).

    Additive mode returns predictions plus residuals under a single row
    permutation shared by all group columns. Leaf-sampling picks, per row, a
    random tree and then a random fold row from the leaf the row lands in,
    copying that row's group values jointly.
    """
    rng = np.random.default_rng(derive_seed(seed, "draw", b))
    n = sampler.n_rows
    if sampler.mode == ADDITIVE:
        order = rng.permutation(n)
        return sampler.predictions + sampler.residuals[order]

    trees = rng.integers(sampler.leaf_ids.shape[1], size=n)
    picks = np.empty(n, dtype=int)
    for i in range(n):
        members = sampler.leaf_members[trees[i]][int(sampler.leaf_ids[i, trees[i]])]
        picks[i] = members[rng.integers(members.size)]
    return sampler.x_group[picks]


def joint_permutation(block, seed):
    """One shared row shuffle applied to every column of a block."""
    block = np.asarray(block, dtype=float)
    rng = np.random.default_rng(seed)
    return block[rng.permutation(block.shape[0])]


def permute_standard(x, spec, j, seed):
    """The standard (unconditional) scheme: jointly shuffle the group's rows."""
    x = np.asarray(x, dtype=float)
    cols = np.asarray(spec.groups[j], dtype=int)
    return joint_permutation(x[:, cols], seed)
