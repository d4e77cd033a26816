"""Circular regression forests.

Trees are grown on random subsamples. A query point receives
"nearest neighbour" weights over the learning rows: for each tree, 1/|leaf|
for every row sharing its terminal node, averaged over trees. The predictive
von Mises distribution is the weighted MLE under those weights.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .circular import VonMisesParams, fit_mle, fit_moments
from .dataset import Dataset
from .errors import ModelFormatError, RoutingError
from .tree import (
    FORMAT_VERSION,
    Tree,
    TreeControl,
    _info_from_dict,
    _info_to_dict,
    covariate_info,
    design_matrix,
    grow,
)


def _forest_tree_control():
    return TreeControl(alpha=1.0, minsplit=20, minbucket=7, nmax=50)


@dataclass
class ForestControl:
    """Ensemble parameters. Defaults: 100 trees on 30% subsamples, grown
    large without pre-pruning (alpha=1, minsplit=20, minbucket=7)."""

    n_trees: int = 100
    subsample_fraction: float = 0.3
    mtry: Optional[int] = None
    tree_ctrl: TreeControl = field(default_factory=_forest_tree_control)
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if isinstance(self.tree_ctrl, dict):
            self.tree_ctrl = TreeControl(**self.tree_ctrl)


@dataclass(eq=False)
class Forest:
    trees: list
    subsamples: list
    control: ForestControl
    covariates: list
    response: np.ndarray
    response_name: str = "y"
    _leaf_stats: Optional[list] = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_learning(self) -> int:
        return self.response.shape[0]

    def forest_weights(self, z) -> np.ndarray:
        """Averaged co-membership weights of the learning rows for ``z``."""
        w = np.zeros(self.n_learning)
        for t, tree in enumerate(self.trees):
            try:
                leaf = tree.route(z)
            except RoutingError as exc:
                raise RoutingError(f"tree {t}: {exc}") from None
            w[leaf.members] += 1.0 / leaf.members.size
        return w / self.n_trees

    def predict(self, z) -> VonMisesParams:
        return fit_mle(self.response, self.forest_weights(z))

    def _stats(self):
        # per tree and pre-order node: mean cos / sin of the leaf members
        if self._leaf_stats is None:
            c = np.cos(self.response)
            s = np.sin(self.response)
            stats = []
            for tree in self.trees:
                nodes = tree.flat_nodes()
                mc = np.full(len(nodes), np.nan)
                ms = np.full(len(nodes), np.nan)
                for i, node in enumerate(nodes):
                    if node.is_leaf:
                        mc[i] = c[node.members].mean()
                        ms[i] = s[node.members].mean()
                stats.append((mc, ms))
            self._leaf_stats = stats
        return self._leaf_stats

    def predict_matrix(self, X):
        """Arrays ``(mu, kappa)`` for every row of a covariate matrix.

        Uses the fact that the weighted resultant under forest weights is the
        tree average of leaf-mean resultants, so no weight vector is formed.
        """
        X = np.asarray(X, dtype=np.float64)
        csum = np.zeros(X.shape[0])
        ssum = np.zeros(X.shape[0])
        for t, (tree, (mc, ms)) in enumerate(zip(self.trees, self._stats())):
            try:
                idx = tree.flat_index(X)
            except RoutingError as exc:
                raise RoutingError(f"tree {t}: {exc}") from None
            csum += mc[idx]
            ssum += ms[idx]
        T = float(self.n_trees)
        mu, kappa, _ = fit_moments(csum / T, ssum / T, np.ones(X.shape[0]))
        return mu, kappa

    def predict_data(self, data: Dataset):
        return self.predict_matrix(design_matrix(data, self.covariates))

    def to_dict(self) -> dict:
        ctrl = asdict(self.control)
        return {
            "format": "circforest.forest",
            "version": FORMAT_VERSION,
            "control": ctrl,
            "covariates": [_info_to_dict(c) for c in self.covariates],
            "response_name": self.response_name,
            "response": self.response.tolist(),
            "subsamples": [s.tolist() for s in self.subsamples],
            "trees": [t.to_dict(include_response=False) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "Forest":
        if d.get("format") != "circforest.forest":
            raise ModelFormatError("not a circforest forest")
        if d.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported forest format version {d.get('version')!r}")
        response = np.asarray(d["response"], dtype=np.float64)
        return cls(
            trees=[Tree.from_dict(t, response=response) for t in d["trees"]],
            subsamples=[np.asarray(s, dtype=np.int64) for s in d["subsamples"]],
            control=ForestControl(**d["control"]),
            covariates=[_info_from_dict(c) for c in d["covariates"]],
            response=response,
            response_name=d.get("response_name", "y"),
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text) -> "Forest":
        return cls.from_dict(json.loads(text))


def grow_forest(data: Dataset, ctrl: Optional[ForestControl] = None, n_jobs: int = 1) -> Forest:
    """Grow ``ctrl.n_trees`` trees, each on a subsample drawn without replacement.

    Every tree gets its own random stream spawned from ``ctrl.seed``, so the
    result does not depend on ``n_jobs``.
    """
    ctrl = ForestControl() if ctrl is None else ctrl
    n = data.n
    n_sub = min(n, max(1, math.ceil(ctrl.subsample_fraction * n)))
    if n_sub < ctrl.tree_ctrl.minsplit:
        warnings.warn(
            f"subsample size {n_sub} is below minsplit={ctrl.tree_ctrl.minsplit}; "
            "trees will not split",
            stacklevel=2,
        )
    streams = np.random.SeedSequence(ctrl.seed).spawn(ctrl.n_trees)

    def one(seq):
        rng = np.random.default_rng(seq)
        rows = np.sort(rng.choice(n, size=n_sub, replace=False))
        return grow(data, ctrl.tree_ctrl, rows=rows, mtry=ctrl.mtry, rng=rng), rows

    if n_jobs is not None and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, streams))
    else:
        results = [one(seq) for seq in streams]
    response = data.response.copy()
    for tree, _ in results:
        tree.response = response
    return Forest(
        trees=[r[0] for r in results],
        subsamples=[r[1] for r in results],
        control=ctrl,
        covariates=covariate_info(data),
        response=response,
        response_name=data.response_name,
    )


def forest_weights(forest: Forest, z) -> np.ndarray:
    return forest.forest_weights(z)


def predict_forest(forest: Forest, z) -> VonMisesParams:
    return forest.predict(z)
