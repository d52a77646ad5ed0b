"""Survival prediction from age and segmentation-derived counts.

Features are deliberately simple: patient age, the number of disconnected
whole-tumor components and the number of disconnected tumor-core components.
A capped least-squares model predicts survival days; a seeded random-forest
classifier predicts the survival class and may override the regression when
it is confident and disagrees.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .refine import SegmentationSet
from .volumes import Connectivity, connected_components


class SurvivalClass(enum.Enum):
    SHORT = "short"
    MID = "mid"
    LONG = "long"


CLASS_ORDER = (SurvivalClass.SHORT, SurvivalClass.MID, SurvivalClass.LONG)

FEATURE_NAMES = ("age", "n_tumors", "n_cores")


@dataclass(frozen=True)
class ClassBins:
    """Day cutoffs for the three survival classes (month = 30 days).

    Short is strictly below ``short_max``; Mid is the closed interval
    [short_max, long_min]; Long is strictly above ``long_min``.
    """

    short_max: float = 300.0
    long_min: float = 450.0

    def classify(self, days: float) -> SurvivalClass:
        if days < self.short_max:
            return SurvivalClass.SHORT
        if days > self.long_min:
            return SurvivalClass.LONG
        return SurvivalClass.MID


@dataclass
class SurvivalRecord:
    case_id: str
    age: float
    n_tumors: int
    n_cores: int
    survival_days: float | None = None
    resection_status: str | None = None

    def __post_init__(self):
        if self.age <= 0:
            raise ValueError(f"age must be positive, got {self.age} ({self.case_id})")
        if self.n_tumors < 0 or self.n_cores < 0:
            raise ValueError(f"component counts must be >= 0 ({self.case_id})")

    def feature(self, name: str) -> float:
        if name not in FEATURE_NAMES:
            raise ValueError(f"unknown feature {name!r}; expected one of {FEATURE_NAMES}")
        return float(getattr(self, name))


def extract_features(
    seg: SegmentationSet,
    age: float,
    connectivity: Connectivity = Connectivity.CORNER26,
    case_id: str = "",
    survival_days: float | None = None,
    resection_status: str | None = None,
) -> SurvivalRecord:
    """Count disconnected WT and TC components of a refined segmentation."""
    n_tumors = connected_components(seg.wt, connectivity).component_count
    n_cores = connected_components(seg.tc, connectivity).component_count
    return SurvivalRecord(
        case_id=case_id,
        age=age,
        n_tumors=n_tumors,
        n_cores=n_cores,
        survival_days=survival_days,
        resection_status=resection_status,
    )


def _design_matrix(records, feature_set):
    rows = [[rec.feature(name) for name in feature_set] for rec in records]
    return np.asarray(rows, dtype=np.float64)


def _require_labeled(records):
    missing = [r.case_id for r in records if r.survival_days is None]
    if missing:
        raise ValueError(f"records without survival_days: {missing[:5]}")


@dataclass
class OlsModel:
    feature_set: tuple[str, ...]
    coefficients: np.ndarray  # intercept first, then one per feature
    cap_days: float = 1000.0

    def predict(self, rec: SurvivalRecord) -> float:
        x = np.concatenate(([1.0], [rec.feature(name) for name in self.feature_set]))
        return float(x @ self.coefficients)


def fit_ols(
    records,
    feature_set: tuple[str, ...] = ("age",),
    cap_days: float = 1000.0,
) -> OlsModel:
    """Least squares on survival days, capping targets at ``cap_days`` first.

    Solved via lstsq (SVD pseudo-inverse), so rank-deficient designs get the
    minimum-norm solution instead of failing.
    """
    records = sorted(records, key=lambda r: r.case_id)
    _require_labeled(records)
    if len(records) < len(feature_set) + 1:
        raise ValueError(
            f"need at least {len(feature_set) + 1} records to fit {len(feature_set)} "
            f"features plus intercept, got {len(records)}"
        )
    feats = _design_matrix(records, feature_set)
    design = np.hstack([np.ones((len(records), 1)), feats])
    targets = np.minimum([r.survival_days for r in records], cap_days)
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return OlsModel(feature_set=tuple(feature_set), coefficients=coef, cap_days=cap_days)


@dataclass
class TreeNode:
    """Decision-tree node; a leaf stores class proportions over CLASS_ORDER."""

    proba: tuple[float, float, float] | None = None
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    def is_leaf(self) -> bool:
        return self.proba is not None

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = self
        while not node.is_leaf():
            node = node.left if x[node.feature] <= node.threshold else node.right
        return np.asarray(node.proba)

    def depth(self) -> int:
        if self.is_leaf():
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf():
            return {"proba": list(self.proba)}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TreeNode":
        if "proba" in d:
            return TreeNode(proba=tuple(d["proba"]))
        return TreeNode(
            feature=d["feature"],
            threshold=d["threshold"],
            left=TreeNode.from_dict(d["left"]),
            right=TreeNode.from_dict(d["right"]),
        )


def _best_split(x: np.ndarray, y: np.ndarray):
    """Exhaustive Gini split search.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values of each feature. Features are scanned in index order and
    thresholds in ascending order with strictly-better acceptance, so ties
    resolve to the lowest feature index, then the lowest threshold.
    """
    n, n_features = x.shape
    onehot = np.zeros((n, 3))
    best = None  # (cost, feature, threshold)
    for f in range(n_features):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        onehot[:] = 0.0
        onehot[np.arange(n), y[order]] = 1.0
        cum = onehot.cumsum(axis=0)
        bounds = np.nonzero(xs[:-1] != xs[1:])[0]
        if bounds.size == 0:
            continue
        thresholds = (xs[bounds] + xs[bounds + 1]) / 2.0
        # guard against midpoints that round onto a sample value
        usable = (xs[bounds] < thresholds) & (thresholds < xs[bounds + 1])
        bounds, thresholds = bounds[usable], thresholds[usable]
        if bounds.size == 0:
            continue
        nl = (bounds + 1).astype(float)
        nr = n - nl
        left = cum[bounds]
        right = cum[-1] - left
        gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
        cost = (nl * gini_l + nr * gini_r) / n
        i = int(np.argmin(cost))  # first minimum: lowest threshold wins ties
        if best is None or cost[i] < best[0]:
            best = (float(cost[i]), f, float(thresholds[i]))
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, depth: int, max_depth: int) -> TreeNode:
    counts = np.bincount(y, minlength=3)
    proba = tuple(counts / counts.sum())
    if depth >= max_depth or np.count_nonzero(counts) <= 1:
        return TreeNode(proba=proba)
    split = _best_split(x, y)
    if split is None:
        return TreeNode(proba=proba)
    _, f, threshold = split
    left = x[:, f] <= threshold
    return TreeNode(
        feature=f,
        threshold=threshold,
        left=_grow_tree(x[left], y[left], depth + 1, max_depth),
        right=_grow_tree(x[~left], y[~left], depth + 1, max_depth),
    )


@dataclass
class ForestModel:
    feature_set: tuple[str, ...]
    n_trees: int = 1000
    max_depth: int = 3
    seed: int = 0
    bins: ClassBins = field(default_factory=ClassBins)
    trees: list[TreeNode] = field(default_factory=list)


def fit_forest(
    records,
    feature_set: tuple[str, ...] = FEATURE_NAMES,
    n_trees: int = 1000,
    max_depth: int = 3,
    seed: int = 0,
    bins: ClassBins | None = None,
) -> ForestModel:
    """Bootstrap-aggregated Gini trees with fully deterministic seeding.

    Tree t resamples the training set with ``default_rng([seed, t])``, so the
    fitted model is a pure function of (seed, data) and independent of the
    input record order (records are canonically sorted by case_id first).
    """
    bins = bins or ClassBins()
    records = sorted(records, key=lambda r: r.case_id)
    _require_labeled(records)
    if not records:
        raise ValueError("cannot fit a forest on an empty training set")
    x = _design_matrix(records, feature_set)
    y = np.asarray(
        [CLASS_ORDER.index(bins.classify(r.survival_days)) for r in records], dtype=np.int64
    )
    n = len(records)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        idx = rng.integers(0, n, size=n)
        trees.append(_grow_tree(x[idx], y[idx], 0, max_depth))
    return ForestModel(
        feature_set=tuple(feature_set),
        n_trees=n_trees,
        max_depth=max_depth,
        seed=seed,
        bins=bins,
        trees=trees,
    )


def predict_forest_proba(model: ForestModel, rec: SurvivalRecord) -> np.ndarray:
    """Mean of the per-tree leaf class proportions, ordered (short, mid, long)."""
    x = np.asarray([rec.feature(name) for name in model.feature_set])
    acc = np.zeros(3)
    for tree in model.trees:
        acc += tree.predict(x)
    return acc / len(model.trees)


@dataclass
class FusionModel:
    """Regression prediction with a confident-classifier override.

    The forest may move the predicted survival to a fixed day value inside
    its predicted class, but only when it disagrees with the regression's
    class and its probability reaches ``override_prob``.
    """

    ols: OlsModel
    forest: ForestModel
    override_prob: float = 0.5
    override_days: dict[SurvivalClass, float] = field(
        default_factory=lambda: {
            SurvivalClass.SHORT: 299.0,
            SurvivalClass.MID: 375.0,
            SurvivalClass.LONG: 451.0,
        }
    )
    bins: ClassBins = field(default_factory=ClassBins)

    def __post_init__(self):
        for cls, days in self.override_days.items():
            if self.bins.classify(days) is not cls:
                raise ValueError(
                    f"override value {days} for {cls.value} falls outside its own class bin"
                )


def predict_fused(model: FusionModel, rec: SurvivalRecord) -> float:
    days = min(max(model.ols.predict(rec), 0.0), model.ols.cap_days)
    linear_class = model.bins.classify(days)
    proba = predict_forest_proba(model.forest, rec)
    rf_idx = int(np.argmax(proba))
    rf_class = CLASS_ORDER[rf_idx]
    if rf_class is not linear_class and proba[rf_idx] >= model.override_prob:
        return float(model.override_days[rf_class])
    return days


def fit_fusion(
    records,
    seed: int = 0,
    ols_features: tuple[str, ...] = ("age",),
    forest_features: tuple[str, ...] = FEATURE_NAMES,
    n_trees: int = 1000,
    max_depth: int = 3,
    cap_days: float = 1000.0,
    override_prob: float = 0.5,
    override_days: dict[SurvivalClass, float] | None = None,
    bins: ClassBins | None = None,
) -> FusionModel:
    bins = bins or ClassBins()
    ols = fit_ols(records, feature_set=ols_features, cap_days=cap_days)
    forest = fit_forest(
        records,
        feature_set=forest_features,
        n_trees=n_trees,
        max_depth=max_depth,
        seed=seed,
        bins=bins,
    )
    kwargs = {} if override_days is None else {"override_days": dict(override_days)}
    return FusionModel(ols=ols, forest=forest, override_prob=override_prob, bins=bins, **kwargs)


def evaluate_survival(pairs, bins: ClassBins | None = None) -> dict[str, float]:
    """Challenge-style summary over (predicted_days, true_days) pairs.

    Accuracy is over the three class bins; squared errors are on raw days
    (stdSE uses the population convention); Spearman uses average ranks for
    ties.
    """
    bins = bins or ClassBins()
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot evaluate an empty prediction list")
    pred = np.asarray([p for p, _ in pairs], dtype=np.float64)
    true = np.asarray([t for _, t in pairs], dtype=np.float64)
    hits = [bins.classify(p) is bins.classify(t) for p, t in pairs]
    se = (pred - true) ** 2
    spearman = stats.spearmanr(pred, true).statistic if len(pairs) > 1 else np.nan
    return {
        "accuracy": float(np.mean(hits)),
        "mse": float(se.mean()),
        "median_se": float(np.median(se)),
        "std_se": float(se.std()),
        "spearman_r": float(spearman),
    }


def kfold_split(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic shuffled fold assignment: index arrays per fold."""
    if folds < 2 or folds > n:
        raise ValueError(f"folds must be in [2, {n}], got {folds}")
    perm = np.random.default_rng([seed]).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, folds)]


def cross_validate(records, fit_predict, folds: int = 5, seed: int = 0,
                   bins: ClassBins | None = None) -> list[float]:
    """Per-fold class accuracy of ``fit_predict(train) -> (record -> days)``.

    Records are canonically sorted by case_id before the seeded split, so the
    fold assignment is reproducible regardless of input order.
    """
    bins = bins or ClassBins()
    records = sorted(records, key=lambda r: r.case_id)
    _require_labeled(records)
    accuracies = []
    for fold_idx in kfold_split(len(records), folds, seed):
        held = set(fold_idx.tolist())
        train = [r for i, r in enumerate(records) if i not in held]
        test = [records[i] for i in sorted(held)]
        predictor = fit_predict(train)
        pairs = [(predictor(r), r.survival_days) for r in test]
        accuracies.append(evaluate_survival(pairs, bins)["accuracy"])
    return accuracies


# --- persistence ---------------------------------------------------------

MODEL_FORMAT = "uqseg-survival-fusion"
MODEL_VERSION = 1


def model_to_json(model: FusionModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "bins": {"short_max": model.bins.short_max, "long_min": model.bins.long_min},
        "override_prob": model.override_prob,
        "override_days": {cls.value: model.override_days[cls] for cls in CLASS_ORDER},
        "ols": {
            "feature_set": list(model.ols.feature_set),
            "coefficients": model.ols.coefficients.tolist(),
            "cap_days": model.ols.cap_days,
        },
        "forest": {
            "feature_set": list(model.forest.feature_set),
            "n_trees": model.forest.n_trees,
            "max_depth": model.forest.max_depth,
            "seed": model.forest.seed,
            "trees": [tree.to_dict() for tree in model.forest.trees],
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save_model(model: FusionModel, path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path) -> FusionModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a survival fusion model file: {path}")
    bins = ClassBins(short_max=doc["bins"]["short_max"], long_min=doc["bins"]["long_min"])
    ols = OlsModel(
        feature_set=tuple(doc["ols"]["feature_set"]),
        coefficients=np.asarray(doc["ols"]["coefficients"]),
        cap_days=doc["ols"]["cap_days"],
    )
    forest = ForestModel(
        feature_set=tuple(doc["forest"]["feature_set"]),
        n_trees=doc["forest"]["n_trees"],
        max_depth=doc["forest"]["max_depth"],
        seed=doc["forest"]["seed"],
        bins=bins,
        trees=[TreeNode.from_dict(d) for d in doc["forest"]["trees"]],
    )
    return FusionModel(
        ols=ols,
        forest=forest,
        override_prob=doc["override_prob"],
        override_days={cls: doc["override_days"][cls.value] for cls in CLASS_ORDER},
        bins=bins,
    )
