"""Circular regression trees.

A tree is grown depth-first: fit a von Mises distribution in the node,
test every candidate covariate against the score matrix, split on the
selected covariate at the point of largest two-sample discrepancy, recurse.
Terminal nodes keep their fitted parameters and learning-row indices, so
prediction is a lookup and tree weights are node co-membership indicators.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Optional

import numpy as np

from . import _kernels
from .circular import VonMisesParams, fit_mle
from .dataset import Dataset
from .errors import DataError, ModelFormatError, RoutingError
from .partition import (
    SplitPoint,
    SplitTestResult,
    TEST_FORMS,
    _select,
    _select_split_point,
    _test_columns,
    score_matrix,
)

FORMAT_VERSION = 1


@dataclass
class TreeControl:
    """Growth parameters.

    ``alpha`` is the significance level for variable selection (1 disables
    pre-pruning), ``minsplit`` the smallest node that may be split,
    ``minbucket`` the smallest allowed terminal node, ``nmax`` the maximum
    number of quantile bins per numeric covariate (``None``: no binning).
    """

    alpha: float = 0.05
    minsplit: int = 20
    minbucket: int = 7
    maxdepth: Optional[int] = None
    nmax: Optional[int] = None
    test_form: str = "quad"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.minbucket < 1:
            raise ValueError("minbucket must be >= 1")
        if self.minsplit < 2 * self.minbucket:
            raise ValueError("minsplit must be >= 2 * minbucket")
        if self.maxdepth is not None and self.maxdepth < 0:
            raise ValueError("maxdepth must be >= 0")
        if self.nmax is not None and self.nmax < 2:
            raise ValueError("nmax must be >= 2")
        if self.test_form not in TEST_FORMS:
            raise ValueError(f"test_form must be one of {TEST_FORMS}")


@dataclass(eq=False)
class Node:
    id: int
    depth: int
    n_obs: int
    params: VonMisesParams
    split: Optional[SplitPoint] = None
    test: Optional[SplitTestResult] = None
    left: Optional["Node"] = None
    right: Optional["Node"] = None
    members: Optional[np.ndarray] = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None


@dataclass(frozen=True)
class CovariateInfo:
    name: str
    kind: str
    levels: Optional[tuple] = None
    circular: bool = False


@dataclass(eq=False)
class Tree:
    root: Node
    control: TreeControl
    covariates: list
    response: np.ndarray
    response_name: str = "y"
    _flat: Optional[tuple] = field(default=None, repr=False)

    # -- structure -------------------------------------------------------
    @property
    def n_learning(self) -> int:
        return self.response.shape[0]

    def nodes(self) -> Iterator[Node]:
        """All nodes in pre-order (left child first)."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def leaves(self) -> list:
        return [n for n in self.nodes() if n.is_leaf]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes())

    def node_members(self, node: Node) -> np.ndarray:
        if node.is_leaf:
            return node.members
        return np.sort(np.concatenate([self.node_members(node.left),
                                       self.node_members(node.right)]))

    # -- routing ---------------------------------------------------------
    def _flatten(self):
        if self._flat is None:
            nodes = list(self.nodes())
            pos = {id(n): i for i, n in enumerate(nodes)}
            k = len(nodes)
            kind = np.zeros(k, dtype=np.int64)
            var = np.zeros(k, dtype=np.int64)
            thr = np.zeros(k)
            left = np.full(k, -1, dtype=np.int64)
            right = np.full(k, -1, dtype=np.int64)
            width = max([len(c.levels) + 1 for c in self.covariates if c.kind == "categorical"],
                        default=1)
            catmask = np.zeros((k, width), dtype=np.bool_)
            for i, n in enumerate(nodes):
                if n.is_leaf:
                    continue
                var[i] = n.split.variable
                left[i] = pos[id(n.left)]
                right[i] = pos[id(n.right)]
                if n.split.kind == "categorical":
                    kind[i] = _kernels.CATEGORICAL
                    catmask[i, list(n.split.left_levels)] = True
                else:
                    kind[i] = _kernels.NUMERIC
                    thr[i] = n.split.threshold
            self._flat = (nodes, (kind, var, thr, left, right, catmask))
        return self._flat

    def _row(self, z) -> np.ndarray:
        m = len(self.covariates)
        if isinstance(z, Mapping):
            row = np.full(m, np.nan)
            for j, info in enumerate(self.covariates):
                if info.name not in z:
                    continue
                v = z[info.name]
                if info.kind == "categorical":
                    row[j] = _encode_label(info, v)
                else:
                    row[j] = np.nan if v is None else float(v)
            return row
        row = np.asarray(z, dtype=np.float64).ravel()
        if row.shape[0] != m:
            raise RoutingError(f"expected {m} covariate values, got {row.shape[0]}")
        return row

    def flat_index(self, X) -> np.ndarray:
        """Pre-order index of the terminal node reached by each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.covariates):
            raise RoutingError(f"covariate matrix must have {len(self.covariates)} columns")
        _, arrays = self._flatten()
        idx, bad = _kernels.route_rows(X, *arrays)
        if np.any(idx < 0):
            r = int(np.flatnonzero(idx < 0)[0])
            name = self.covariates[int(bad[r])].name
            raise RoutingError(f"row {r}: split variable {name!r} is missing")
        return idx

    def flat_nodes(self) -> list:
        return self._flatten()[0]

    def apply_matrix(self, X) -> list:
        """Terminal node reached by every row of an ``(n, m)`` covariate matrix."""
        nodes = self.flat_nodes()
        return [nodes[i] for i in self.flat_index(X)]

    def apply(self, data) -> list:
        return self.apply_matrix(design_matrix(data, self.covariates))

    def route(self, z) -> Node:
        """Terminal node for a single covariate row (mapping by name, or a
        sequence in covariate order with categorical codes)."""
        row = self._row(z)
        node = self.root
        while not node.is_leaf:
            v = row[node.split.variable]
            if np.isnan(v):
                name = self.covariates[node.split.variable].name
                raise RoutingError(f"split variable {name!r} is missing")
            node = node.left if node.split.goes_left(v) else node.right
        return node

    def tree_weights(self, z) -> np.ndarray:
        w = np.zeros(self.n_learning)
        w[self.route(z).members] = 1.0
        return w

    def predict(self, z) -> VonMisesParams:
        return self.route(z).params

    def predict_matrix(self, X):
        """Arrays ``(mu, kappa)`` for every row of a covariate matrix."""
        nodes = self.flat_nodes()
        mu = np.array([n.params.mu for n in nodes])
        kappa = np.array([n.params.kappa for n in nodes])
        idx = self.flat_index(X)
        return mu[idx], kappa[idx]

    def predict_data(self, data: Dataset):
        return self.predict_matrix(design_matrix(data, self.covariates))

    # -- export ------------------------------------------------------------
    def to_dict(self, include_response=True) -> dict:
        out = {
            "format": "circforest.tree",
            "version": FORMAT_VERSION,
            "control": asdict(self.control),
            "covariates": [_info_to_dict(c) for c in self.covariates],
            "response_name": self.response_name,
            "n_learning": self.n_learning,
            "root": _node_to_dict(self.root),
        }
        if include_response:
            out["response"] = self.response.tolist()
        return out

    @classmethod
    def from_dict(cls, d, response=None) -> "Tree":
        if d.get("format") != "circforest.tree":
            raise ModelFormatError("not a circforest tree")
        if d.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported tree format version {d.get('version')!r}")
        if response is None:
            if "response" not in d:
                raise ModelFormatError("tree has no stored learning response")
            response = d["response"]
        return cls(
            root=_node_from_dict(d["root"]),
            control=TreeControl(**d["control"]),
            covariates=[_info_from_dict(c) for c in d["covariates"]],
            response=np.asarray(response, dtype=np.float64),
            response_name=d.get("response_name", "y"),
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text) -> "Tree":
        return cls.from_dict(json.loads(text))

    def to_dot(self) -> str:
        lines = ["digraph circtree {", '  node [shape=box, fontname="Helvetica"];']
        for n in self.nodes():
            if n.is_leaf:
                label = (f"node {n.id}\\nmu = {n.params.mu_deg:.1f} deg\\n"
                         f"kappa = {n.params.kappa:.3g}\\nn = {n.n_obs}")
                lines.append(f'  n{n.id} [label="{label}", style=rounded];')
            else:
                info = self.covariates[n.split.variable]
                p = n.test.p_value if n.test is not None else float("nan")
                label = f"{_dot_escape(info.name)}\\n{_fmt_p(p)}"
                lines.append(f'  n{n.id} [label="{label}", shape=ellipse];')
                lft, rgt = _split_labels(n.split, info)
                lines.append(f'  n{n.id} -> n{n.left.id} [label="{lft}"];')
                lines.append(f'  n{n.id} -> n{n.right.id} [label="{rgt}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def export(self, format="json") -> str:
        if format == "json":
            return self.to_json(indent=1)
        if format == "dot":
            return self.to_dot()
        raise ValueError(f"unknown export format {format!r}")


def _fmt_p(p):
    if not math.isfinite(p):
        return "p = NA"
    return "p < 0.001" if p < 0.001 else f"p = {p:.3f}"


def _dot_escape(s):
    return str(s).replace("\\", "\\\\").replace('"', '\\"')


def _split_labels(split: SplitPoint, info: CovariateInfo):
    if split.kind == "categorical":
        left = [str(info.levels[c - 1]) for c in split.left_levels]
        right = [str(lev) for i, lev in enumerate(info.levels, 1) if i not in split.left_levels]
        return (_dot_escape("{" + ", ".join(left) + "}"),
                _dot_escape("{" + ", ".join(right) + "}"))
    t = f"{split.threshold:.6g}"
    return f"<= {t}", f"> {t}"


def _encode_label(info: CovariateInfo, v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return np.nan
    try:
        return float(info.levels.index(v) + 1)
    except ValueError:
        # unseen level: a code outside every split's left set routes right
        return float(len(info.levels) + 1)


def design_matrix(data, covariates) -> np.ndarray:
    """Covariate matrix for ``data`` with columns ordered and coded as ``covariates``.

    Categorical columns are re-encoded by label so datasets with a different
    level set still route consistently.
    """
    if not isinstance(data, Dataset):
        return np.asarray(data, dtype=np.float64)
    cols = []
    for info in covariates:
        try:
            cov = data.covariate(info.name)
        except KeyError:
            raise RoutingError(f"covariate {info.name!r} not present in data") from None
        if info.kind == "categorical":
            if cov.kind != "categorical":
                raise RoutingError(f"covariate {info.name!r} must be categorical")
            if tuple(cov.levels) == tuple(info.levels):
                cols.append(cov.values)
            else:
                remap = np.array([np.nan] + [_encode_label(info, lev) for lev in cov.levels])
                codes = np.where(np.isnan(cov.values), 0, cov.values).astype(np.int64)
                cols.append(remap[codes])
        else:
            cols.append(cov.values)
    if not cols:
        return np.empty((data.n, 0))
    return np.column_stack(cols)


def covariate_info(data: Dataset) -> list:
    return [CovariateInfo(c.name, c.kind, c.levels, c.circular) for c in data.covariates]


def _params_to_dict(p: VonMisesParams):
    return {"mu": p.mu, "mu_deg": p.mu_deg, "kappa": p.kappa, "degenerate": p.degenerate}


def _node_to_dict(node: Node) -> dict:
    d = {
        "id": node.id,
        "depth": node.depth,
        "n_obs": node.n_obs,
        "params": _params_to_dict(node.params),
        "test": None if node.test is None else asdict(node.test),
    }
    if node.is_leaf:
        d["members"] = node.members.tolist()
    else:
        sp = asdict(node.split)
        if sp["left_levels"] is not None:
            sp["left_levels"] = list(sp["left_levels"])
        d["split"] = sp
        d["left"] = _node_to_dict(node.left)
        d["right"] = _node_to_dict(node.right)
    return d


def _node_from_dict(d) -> Node:
    p = d["params"]
    node = Node(
        id=d["id"],
        depth=d["depth"],
        n_obs=d["n_obs"],
        params=VonMisesParams(p["mu"], p["kappa"], p["degenerate"]),
        test=None if d.get("test") is None else SplitTestResult(**d["test"]),
    )
    if "split" in d:
        sp = dict(d["split"])
        if sp.get("left_levels") is not None:
            sp["left_levels"] = tuple(sp["left_levels"])
        node.split = SplitPoint(**sp)
        node.left = _node_from_dict(d["left"])
        node.right = _node_from_dict(d["right"])
    else:
        node.members = np.asarray(d["members"], dtype=np.int64)
    return node


def _info_to_dict(c: CovariateInfo):
    return {"name": c.name, "kind": c.kind,
            "levels": None if c.levels is None else list(c.levels), "circular": c.circular}


def _info_from_dict(d) -> CovariateInfo:
    levels = d.get("levels")
    return CovariateInfo(d["name"], d["kind"], None if levels is None else tuple(levels),
                         bool(d.get("circular", False)))


class _Grower:
    def __init__(self, y, X, infos, ctrl, mtry, rng):
        self.y = y
        self.X = X
        self.kinds = [c.kind for c in infos]
        self.nlevels = [len(c.levels) if c.kind == "categorical" else 0 for c in infos]
        self.ctrl = ctrl
        self.m = X.shape[1]
        self.mtry = None if mtry is None or mtry >= self.m else int(mtry)
        self.rng = rng
        self.next_id = 0

    def candidates(self):
        if self.mtry is None:
            return range(self.m)
        return np.sort(self.rng.choice(self.m, size=self.mtry, replace=False)).tolist()

    def grow(self, rows, depth) -> Node:
        ctrl = self.ctrl
        params = fit_mle(self.y[rows])
        node = Node(self.next_id, depth, int(rows.size), params)
        self.next_id += 1
        n = rows.size
        if (
            n < ctrl.minsplit
            or n < 2 * ctrl.minbucket
            or (ctrl.maxdepth is not None and depth >= ctrl.maxdepth)
            or params.capped
            or self.m == 0
        ):
            node.members = rows
            return node
        sm = score_matrix(self.y[rows], params)
        columns = ((j, self.X[rows, j], self.kinds[j], self.nlevels[j]) for j in self.candidates())
        test = _select(_test_columns(sm, columns, ctrl.test_form), ctrl.alpha)
        if test is None:
            node.members = rows
            return node
        j = test.variable
        values = self.X[rows, j]
        split = _select_split_point(sm, values, self.kinds[j], self.nlevels[j],
                                    ctrl.minbucket, ctrl.nmax, j)
        if split is None:
            node.members = rows
            return node
        miss = np.isnan(values)
        go_left = split.goes_left(values) & ~miss
        if miss.any():
            # rows missing the split variable follow the larger child
            go_left |= miss & (split.n_left >= split.n_right)
        node.split = split
        node.test = test
        node.left = self.grow(rows[go_left], depth + 1)
        node.right = self.grow(rows[~go_left], depth + 1)
        return node


def grow(data: Dataset, ctrl: Optional[TreeControl] = None, rows=None, mtry=None, rng=None) -> Tree:
    """Grow a circular regression tree on ``data`` (optionally a row subset).

    ``mtry`` covariates are drawn from ``rng`` at every split attempt; by
    default all covariates are candidates. Leaf ``members`` index rows of
    ``data`` (not of the subset).
    """
    ctrl = TreeControl() if ctrl is None else ctrl
    rows = np.arange(data.n) if rows is None else np.sort(np.asarray(rows, dtype=np.int64))
    if rows.size == 0:
        raise DataError("cannot grow a tree on an empty dataset")
    y = data.response
    if np.any(np.isnan(y[rows])):
        raise DataError("response has missing values; preprocess the data first")
    if mtry is not None and rng is None:
        rng = np.random.default_rng()
    grower = _Grower(y, data.matrix(), covariate_info(data), ctrl, mtry, rng)
    root = grower.grow(rows, 0)
    return Tree(root, ctrl, covariate_info(data), y.copy(), data.response_name)
