"""Random forest classifier built from scratch.

CART trees split on weighted Gini impurity, each grown on a bootstrap sample
with a fresh random feature subset drawn at every node. The forest votes by
majority. Rows left out of a tree's bootstrap (out-of-bag rows) drive the OOB
error and the permutation feature importance.

Bootstrap duplicates are handled as integer row weights: a row drawn three
times is kept once with weight 3. Split search and leaf counts use those
weights, so the grown tree is the same as the one grown on the expanded sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import LabeledDataset
from .features import FEATURE_NAMES
from .seeding import derive_seed, rng

MODEL_FORMAT = "crypto-aegis-forest"
MODEL_VERSION = 1

# impurities closer than this count as tied; ties go to the lower
# feature index, then the lower threshold
TIE_TOL = 1e-12


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 20
    m_try: int | None = None      # None: ceil(sqrt(n_features))
    min_leaf: int = 1
    max_depth: int | None = None  # None: grow until pure
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.m_try is not None and self.m_try < 1:
            raise ValueError("m_try must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def features_per_split(self, n_features: int) -> int:
        m = self.m_try if self.m_try is not None else math.ceil(math.sqrt(n_features))
        if not 1 <= m <= n_features:
            raise ValueError(f"m_try must be in [1, {n_features}], got {m}")
        return m


class Split(NamedTuple):
    feature: int
    threshold: float
    gini_gain: float
    impurity: float  # weighted Gini of the two children


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(X: np.ndarray, y: np.ndarray, feature_subset: Sequence[int],
               n_classes: int | None = None, weights: np.ndarray | None = None,
               min_leaf: int = 1) -> Split | None:
    """Lowest weighted-Gini split of the rows ``X``/``y`` over ``feature_subset``.

    Candidate thresholds are midpoints between consecutive distinct values;
    a row goes left when its value is ``<= threshold``. Returns ``None`` when
    the node is pure or no candidate feature has two distinct values (or no
    split leaves ``min_leaf`` weight on both sides).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if n == 0:
        raise ValueError("best_split needs at least one row")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    totals = np.bincount(y, weights=w, minlength=n_classes)
    if np.count_nonzero(totals) <= 1:
        return None
    W = totals.sum()
    parent = gini(totals)

    best: Split | None = None
    onehot = np.zeros((n, n_classes))
    for f in sorted(set(int(j) for j in feature_subset)):
        x = X[:, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cand = np.flatnonzero(xs[:-1] < xs[1:])
        if cand.size == 0:
            continue
        onehot[:] = 0.0
        onehot[np.arange(n), y[order]] = w[order]
        left = np.cumsum(onehot, axis=0)[cand]
        right = totals - left
        n_left = left.sum(axis=1)
        n_right = W - n_left
        ok = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not ok.any():
            continue
        cand, left, right, n_left, n_right = cand[ok], left[ok], right[ok], n_left[ok], n_right[ok]
        # sum_children n_c * gini_c, divided by W
        impurity = (n_left - (left * left).sum(axis=1) / n_left
                    + n_right - (right * right).sum(axis=1) / n_right) / W
        pos = int(np.flatnonzero(impurity <= impurity.min() + TIE_TOL)[0])
        if best is None or impurity[pos] < best.impurity - TIE_TOL:
            i = cand[pos]
            best = Split(f, _midpoint(xs[i], xs[i + 1]), parent - float(impurity[pos]),
                         float(impurity[pos]))
    return best


def _midpoint(a: float, b: float) -> float:
    t = a + (b - a) / 2.0
    # adjacent floats: the midpoint rounds onto b and would send b left
    return float(a if t >= b else t)


@dataclass
class DecisionTree:
    """Flat node arena; node 0 is the root, leaves have ``feature == -1``."""
    feature: np.ndarray     # int
    threshold: np.ndarray   # float, nan at leaves
    left: np.ndarray        # int, -1 at leaves
    right: np.ndarray
    counts: np.ndarray      # (n_nodes, n_classes) weighted class counts

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        while active.size:
            f = self.feature[node[active]]
            internal = f >= 0
            active, f = active[internal], f[internal]
            if not active.size:
                break
            cur = node[active]
            go_left = X[active, f] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def leaf_class(self) -> np.ndarray:
        # argmax picks the lowest class index on ties
        return np.argmax(self.counts, axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_class()[self.apply(X)]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


def grow_tree(ds: LabeledDataset, bootstrap_indices, cfg: TrainConfig,
              tree_seed: int) -> DecisionTree:
    """Grow one tree breadth-first, splitting a whole level of nodes at a time.

    Each frontier node gets a fresh feature subset and the split
    :func:`best_split` would choose for its rows (same candidates, same
    impurity arithmetic, same tie rules). Doing a level at once keeps the
    per-node Python overhead out of deep trees.
    """
    idx = np.asarray(bootstrap_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("bootstrap_indices must be non-empty")
    rows, weights = np.unique(idx, return_counts=True)
    X = ds.samples[rows]
    y = ds.labels[rows]
    w = weights.astype(float)
    n, n_features = X.shape
    n_classes = ds.n_classes
    m_try = cfg.features_per_split(n_features)
    gen = rng(tree_seed, 1)

    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = w
    # per feature: active rows grouped by frontier slot, sorted by value inside a slot
    orders = [np.argsort(X[:, f], kind="stable") for f in range(n_features)]
    slot = np.zeros(n, dtype=np.int64)          # frontier slot per row, -1 once in a leaf

    feature, threshold, left, right = [-1], [math.nan], [-1], [-1]
    counts = [onehot.sum(axis=0)]
    frontier = np.array([0])
    depth = 0
    while frontier.size:
        cc = np.array([counts[i] for i in frontier])
        totals = cc.sum(axis=1)
        splittable = (np.count_nonzero(cc, axis=1) > 1) & (totals >= 2 * cfg.min_leaf)
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            splittable[:] = False
        allowed = np.zeros((frontier.size, n_features), dtype=bool)
        cand_slots = np.flatnonzero(splittable)
        if cand_slots.size:
            keys = gen.random((cand_slots.size, n_features))
            picked = np.argsort(keys, axis=1)[:, :m_try]
            allowed[np.repeat(cand_slots, m_try), picked.ravel()] = True

        best_f = np.full(frontier.size, -1)
        best_t = np.zeros(frontier.size)
        best_imp = np.full(frontier.size, np.inf)
        for f in range(n_features):
            if not allowed[:, f].any():
                continue
            imp, pos, o = _level_candidates(X[:, f], orders[f], slot, onehot, cc, totals,
                                            allowed[:, f], cfg.min_leaf)
            if imp is None:
                continue
            s = slot[o[pos]]
            better = (best_f[s] < 0) | (imp < best_imp[s] - TIE_TOL)
            s, pos, imp = s[better], pos[better], imp[better]
            xs = X[o, f]
            best_f[s] = f
            best_imp[s] = imp
            best_t[s] = [_midpoint(a, b) for a, b in zip(xs[pos], xs[pos + 1])]

        split_slots = np.flatnonzero(best_f >= 0)
        if not split_slots.size:
            break
        # children of the k-th split node take slots 2k (left) and 2k+1 (right)
        rank = np.full(frontier.size, -1)
        rank[split_slots] = np.arange(split_slots.size)
        active = np.flatnonzero(slot >= 0)
        s = slot[active]
        r = rank[s]
        keep = r >= 0
        active, s, r = active[keep], s[keep], r[keep]
        go_right = X[active, best_f[s]] > best_t[s]
        slot[:] = -1
        slot[active] = 2 * r + go_right

        child_counts = np.bincount(slot[active] * n_classes + y[active], weights=w[active],
                                   minlength=2 * split_slots.size * n_classes
                                   ).reshape(-1, n_classes)
        children = []
        for k, sl in enumerate(split_slots):
            nid = int(frontier[sl])
            lid, rid = len(feature), len(feature) + 1
            feature[nid], threshold[nid] = int(best_f[sl]), float(best_t[sl])
            left[nid], right[nid] = lid, rid
            for c in (2 * k, 2 * k + 1):
                feature.append(-1)
                threshold.append(math.nan)
                left.append(-1)
                right.append(-1)
                counts.append(child_counts[c])
            children += [lid, rid]
        frontier = np.array(children)
        for f in range(n_features):
            o = orders[f]
            o = o[slot[o] >= 0]
            orders[f] = o[np.argsort(slot[o], kind="stable")]
        depth += 1

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=float).reshape(len(feature), n_classes),
    )


def _level_candidates(x, order, slot, onehot, cc, totals, allowed, min_leaf):
    """Best threshold position on one feature for every frontier slot allowed to use it.

    Returns ``(impurity, position, order)``: one entry per slot that has a
    valid candidate, where ``order[position]`` and ``order[position + 1]``
    bracket the chosen threshold. ``(None, None, None)`` when no slot has one.
    """
    o = order[allowed[slot[order]]]
    if o.size < 2:
        return None, None, None
    s = slot[o]
    xs = x[o]
    valid = (s[:-1] == s[1:]) & (xs[:-1] < xs[1:])
    cand = np.flatnonzero(valid)
    if not cand.size:
        return None, None, None
    cum = np.cumsum(onehot[o], axis=0)
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    base = np.zeros((cc.shape[0], cc.shape[1]))
    nz = starts[starts > 0]
    base[s[nz]] = cum[nz - 1]
    cs = s[cand]
    lc = cum[cand] - base[cs]
    rc = cc[cs] - lc
    n_left = lc.sum(axis=1)
    n_right = totals[cs] - n_left
    ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    if not ok.any():
        return None, None, None
    cand, cs, lc, rc, n_left, n_right = cand[ok], cs[ok], lc[ok], rc[ok], n_left[ok], n_right[ok]
    imp = (n_left - (lc * lc).sum(axis=1) / n_left
           + n_right - (rc * rc).sum(axis=1) / n_right) / totals[cs]
    lowest = np.full(cc.shape[0], np.inf)
    np.minimum.at(lowest, cs, imp)
    # lowest threshold among the near-minimal candidates of each slot
    near = np.flatnonzero(imp <= lowest[cs] + TIE_TOL)
    _, first = np.unique(cs[near], return_index=True)
    pick = near[first]
    return imp[pick], cand[pick], o


@dataclass
class RandomForest:
    trees: list[DecisionTree]
    oob_masks: np.ndarray   # (n_trees, n_train_rows) bool, True = out of bag
    class_names: tuple[str, ...]
    config: TrainConfig
    n_features: int
    meta: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def votes(self, X: np.ndarray) -> np.ndarray:
        """Class index voted by every tree, shape (n_rows, n_trees)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([t.predict(X) for t in self.trees])

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        v = self.votes(X)
        scores = _vote_counts(v, self.n_classes) / len(self.trees)
        return scores[0] if single else scores

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class indices; ties go to the lower class index."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        pred = np.argmax(_vote_counts(self.votes(X), self.n_classes), axis=1)
        return pred[0] if single else pred

    def classify(self, x) -> str | list[str]:
        pred = self.predict(x)
        if np.ndim(pred) == 0:
            return self.class_names[int(pred)]
        return [self.class_names[int(p)] for p in pred]


def _vote_counts(votes: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((votes.shape[0], n_classes))
    for c in range(n_classes):
        out[:, c] = np.count_nonzero(votes == c, axis=1)
    return out


def tree_seed(seed: int, tree_index: int) -> int:
    return derive_seed(seed + tree_index)


def train(ds: LabeledDataset, cfg: TrainConfig = TrainConfig()) -> RandomForest:
    if np.unique(ds.labels).size < 2:
        raise ValueError("training needs at least two classes present")
    n = len(ds)
    trees, masks = [], []
    for t in range(cfg.n_trees):
        s = tree_seed(cfg.seed, t)
        boot = rng(s, 0).integers(0, n, size=n)
        in_bag = np.bincount(boot, minlength=n) > 0
        trees.append(grow_tree(ds, boot, cfg, s))
        masks.append(~in_bag)
    return RandomForest(trees, np.array(masks, dtype=bool).reshape(cfg.n_trees, n),
                        ds.class_names, cfg, ds.samples.shape[1])


def predict_scores(model: RandomForest, x) -> np.ndarray:
    return model.predict_scores(x)


def classify(model: RandomForest, x):
    return model.classify(x)


def oob_error(model: RandomForest, ds: LabeledDataset) -> float:
    """Misclassification rate using, for each row, only the trees it was out of bag for."""
    if model.oob_masks.shape[1] != len(ds):
        raise ValueError("dataset does not match the model's training rows")
    votes = model.votes(ds.samples)                    # (n, T)
    oob = model.oob_masks.T                            # (n, T)
    counts = np.zeros((len(ds), model.n_classes))
    for c in range(model.n_classes):
        counts[:, c] = np.count_nonzero((votes == c) & oob, axis=1)
    has_oob = oob.any(axis=1)
    if not has_oob.any():
        raise ValueError("no row is out of bag for any tree")
    pred = np.argmax(counts[has_oob], axis=1)
    return float(np.mean(pred != ds.labels[has_oob]))


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: tuple[str, ...]
    mean_delta: np.ndarray
    std_delta: np.ndarray
    score: np.ndarray
    deltas: np.ndarray  # (n_trees_used, n_features)

    def ranking(self) -> list[str]:
        """Feature names, most important first (stable on ties)."""
        order = np.argsort(-self.score, kind="stable")
        return [self.feature_names[i] for i in order]

    def as_dict(self) -> dict:
        return {name: {"mean_delta": float(m), "std_delta": float(s), "score": float(sc)}
                for name, m, s, sc in zip(self.feature_names, self.mean_delta,
                                          self.std_delta, self.score)}


def permutation_importance(model: RandomForest, ds: LabeledDataset, seed: int) -> ImportanceReport:
    """Per-tree OOB error increase after shuffling each feature.

    For every tree, its out-of-bag rows are scored once as-is and once per
    feature with that column shuffled among those rows. The per-feature score
    is the mean increase over trees divided by its (sample) standard
    deviation over trees, 0 when that deviation is 0. With 0/1 labels the
    misclassification rate is the mean squared error of the predictions.
    """
    if model.oob_masks.shape[1] != len(ds):
        raise ValueError("dataset does not match the model's training rows")
    if not model.oob_masks.any():
        raise ValueError("no row is out of bag for any tree")
    n_features = ds.samples.shape[1]
    deltas = []
    for t, tree in enumerate(model.trees):
        rows = np.flatnonzero(model.oob_masks[t])
        if rows.size == 0:
            continue
        X = ds.samples[rows]
        y = ds.labels[rows]
        base = np.mean(tree.predict(X) != y)
        row = np.empty(n_features)
        for j in range(n_features):
            Xp = X.copy()
            Xp[:, j] = X[rng(seed, t, j).permutation(rows.size), j]
            row[j] = np.mean(tree.predict(Xp) != y) - base
        deltas.append(row)
    deltas = np.array(deltas)
    mean = deltas.mean(axis=0)
    std = deltas.std(axis=0, ddof=1) if deltas.shape[0] > 1 else np.zeros(n_features)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(std > 0, mean / np.where(std > 0, std, 1.0), 0.0)
    names = FEATURE_NAMES if n_features == len(FEATURE_NAMES) else tuple(
        f"f{j}" for j in range(n_features))
    return ImportanceReport(tuple(names), mean, std, score, deltas)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def _fmt_threshold(t: float):
    return None if math.isnan(t) else format(float(t), ".17g")


def model_to_json(model: RandomForest) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "class_names": list(model.class_names),
        "n_features": model.n_features,
        "config": asdict(model.config),
        "meta": model.meta,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [_fmt_threshold(v) for v in t.threshold],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "counts": [[int(c) for c in row] for row in t.counts],
            }
            for t in model.trees
        ],
        "oob_masks": ["".join("1" if b else "0" for b in m) for m in model.oob_masks],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def model_from_json(text: str) -> RandomForest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a crypto-aegis model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        class_names = tuple(str(c) for c in doc["class_names"])
        cfg = TrainConfig(**doc["config"])
        n_features = int(doc["n_features"])
        trees = [_tree_from_doc(t, len(class_names), n_features) for t in doc["trees"]]
        masks = np.array([[ch == "1" for ch in m] for m in doc["oob_masks"]], dtype=bool)
        meta = dict(doc.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from None
    if len(trees) != cfg.n_trees or masks.shape[0] != len(trees):
        raise ModelFormatError("tree count does not match config")
    return RandomForest(trees, masks.reshape(len(trees), -1), class_names, cfg, n_features, meta)


def _tree_from_doc(d: dict, n_classes: int, n_features: int) -> DecisionTree:
    feature = np.array(d["feature"], dtype=np.int64)
    n = feature.shape[0]
    threshold = np.array([math.nan if v is None else float(v) for v in d["threshold"]])
    left = np.array(d["left"], dtype=np.int64)
    right = np.array(d["right"], dtype=np.int64)
    counts = np.array(d["counts"], dtype=float).reshape(n, n_classes)
    if n == 0 or not (threshold.shape == left.shape == right.shape == (n,)):
        raise ValueError("node arrays have inconsistent lengths")
    internal = feature >= 0
    if np.any(feature >= n_features):
        raise ValueError("feature index out of range")
    for child in (left[internal], right[internal]):
        if np.any((child <= 0) | (child >= n)):
            raise ValueError("child index out of range")
    if not np.all(np.isfinite(threshold[internal])):
        raise ValueError("non-finite threshold")
    return DecisionTree(feature, threshold, left, right, counts)
