"""Nodule-level cancer classification and patient aggregation.

A baseline classifier scores each detected candidate from three geometric
features (radius, power, relative z position).  Three integration modes
enrich that vector with the output of a trained malignancy network: the
predicted class index, the full probability vector, or the penultimate-layer
activations.  Classifier families and hyperparameters are searched with
patient-grouped 5-fold cross-validation, and per-nodule probabilities are
reduced to one prediction per patient by taking the most suspicious nodule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.neighbors import KNeighborsClassifier
from sklearn.neural_network import MLPClassifier
from sklearn.svm import SVC

from .errors import FoldError, IntegrationError, NoNodulesDetected
from .evaluation import weighted_metrics
from .neural.models import TrainedModel
from .neural.train import penultimate_features, predict_proba

BASE_SCHEMA = ("radius", "power", "relative_z")


class IntegrationMode(Enum):
    BASELINE = "baseline"
    CLASS = "class"
    PROBABILITY = "prob"
    MODEL = "model"


@dataclass
class FeatureVector:
    values: np.ndarray
    schema: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.values) != len(self.schema):
            raise IntegrationError(
                f"feature vector length {len(self.values)} != schema length "
                f"{len(self.schema)}"
            )


def propagate_labels(patient_label: int, candidates: list) -> list:
    """Copy a patient's cancer label onto every candidate from that scan."""
    if patient_label not in (0, 1):
        raise ValueError(f"patient label must be 0 or 1, got {patient_label!r}")
    return [(candidate, patient_label) for candidate in candidates]


def make_features(candidate, mal=None, mode=IntegrationMode.BASELINE) -> FeatureVector:
    """Feature vector for one candidate under the chosen integration mode.

    ``mal`` is the malignancy network's output for the candidate: the class
    probability vector for CLASS and PROBABILITY modes, the penultimate
    activation vector for MODEL mode, and absent for BASELINE.
    """
    mode = IntegrationMode(mode)
    base = [float(candidate.radius), float(candidate.power), float(candidate.relative_z)]
    if mode is IntegrationMode.BASELINE:
        if mal is not None:
            raise IntegrationError("baseline mode takes no malignancy output")
        return FeatureVector(base, BASE_SCHEMA)
    if mal is None:
        raise IntegrationError(f"{mode.value} mode requires the malignancy output")
    mal = np.asarray(mal, dtype=float)
    if mode is IntegrationMode.CLASS:
        return FeatureVector(base + [float(np.argmax(mal))], BASE_SCHEMA + ("mal_class",))
    if mode is IntegrationMode.PROBABILITY:
        if mal.shape != (3,):
            raise IntegrationError(
                f"probability mode expects 3 class probabilities, got shape {mal.shape}"
            )
        schema = BASE_SCHEMA + tuple(f"mal_prob_{i}" for i in range(3))
        return FeatureVector(base + list(mal), schema)
    schema = BASE_SCHEMA + tuple(f"mal_act_{i}" for i in range(len(mal)))
    return FeatureVector(base + list(mal), schema)


def featurize_candidates(
    candidates: list,
    mode: IntegrationMode,
    mal_model: TrainedModel | None = None,
    cubes: list | None = None,
) -> np.ndarray:
    """Feature matrix for a candidate list; runs the malignancy network once.

    ``cubes`` must align with ``candidates`` for every mode except BASELINE.
    """
    mode = IntegrationMode(mode)
    if mode is IntegrationMode.BASELINE:
        return np.array(
            [make_features(c, mode=mode).values for c in candidates], dtype=float
        ).reshape(len(candidates), len(BASE_SCHEMA))
    if mal_model is None or cubes is None:
        raise IntegrationError(f"{mode.value} mode requires a malignancy model and cubes")
    if len(cubes) != len(candidates):
        raise IntegrationError("cubes and candidates must align")
    if not candidates:
        return np.zeros((0, len(BASE_SCHEMA)))
    if mode is IntegrationMode.MODEL:
        outputs = penultimate_features(mal_model, cubes)
    else:
        outputs = predict_proba(mal_model, cubes)
    return np.array(
        [make_features(c, mal, mode).values for c, mal in zip(candidates, outputs)]
    )


# ---------------------------------------------------------------------------
# grid-search cross-validation


@dataclass
class ClassifierGrid:
    """One classifier family with lists of hyperparameter values to sweep."""

    family: str  # nearest-neighbor | logistic | random-forest | support-vector | dense-head
    param_grid: dict

    def __post_init__(self):
        if self.family not in _BUILDERS:
            raise ValueError(f"unknown classifier family {self.family!r}")
        if not self.param_grid or any(len(v) == 0 for v in self.param_grid.values()):
            raise ValueError("parameter grid must be non-empty")

    def configurations(self):
        keys = list(self.param_grid)
        for combo in itertools.product(*(self.param_grid[k] for k in keys)):
            yield dict(zip(keys, combo))


def _build_nearest_neighbor(params, seed):
    return KNeighborsClassifier(**params)


def _build_logistic(params, seed):
    # liblinear supports both l1 and l2 penalties
    return LogisticRegression(
        solver="liblinear", class_weight="balanced", random_state=seed, **params
    )


def _build_random_forest(params, seed):
    return RandomForestClassifier(class_weight="balanced", random_state=seed, **params)


def _build_support_vector(params, seed):
    params = dict(params)
    if params.get("kernel") == "radial":
        params["kernel"] = "rbf"
    # aggregation consumes probabilities, so fit the internal calibration
    return SVC(class_weight="balanced", probability=True, random_state=seed, **params)


def _build_dense_head(params, seed):
    return MLPClassifier(
        solver="lbfgs", max_iter=200, tol=1e-4, random_state=seed, **params
    )


_BUILDERS = {
    "nearest-neighbor": _build_nearest_neighbor,
    "logistic": _build_logistic,
    "random-forest": _build_random_forest,
    "support-vector": _build_support_vector,
    "dense-head": _build_dense_head,
}


def default_grids(families=None) -> list[ClassifierGrid]:
    """The full published hyperparameter sweep for the four baseline families."""
    grids = [
        ClassifierGrid(
            "nearest-neighbor",
            {"n_neighbors": [1, 3, 5, 7, 9, 11], "weights": ["uniform", "distance"]},
        ),
        ClassifierGrid(
            "logistic",
            {"C": [0.001, 0.01, 0.1, 0.5, 1, 3], "penalty": ["l1", "l2"]},
        ),
        ClassifierGrid(
            "random-forest",
            {
                "n_estimators": [100, 150, 200, 250, 500, 750],
                "criterion": ["entropy", "gini"],
                "max_depth": [None, 2, 4, 6],
            },
        ),
        ClassifierGrid(
            "support-vector",
            {
                "C": [0.001, 0.01, 0.1, 0.5, 1, 3],
                "gamma": [0.005, 0.01, 0.05, 0.1, 1, 3],
                "kernel": ["radial", "poly"],
                "degree": [3, 5, 7, 9],
            },
        ),
    ]
    if families is not None:
        grids = [g for g in grids if g.family in families]
    return grids


def small_grids() -> list[ClassifierGrid]:
    """Reduced sweep for fast end-to-end runs and tests."""
    return [
        ClassifierGrid("logistic", {"C": [0.1, 1], "penalty": ["l2"]}),
        ClassifierGrid("nearest-neighbor", {"n_neighbors": [3, 5], "weights": ["uniform"]}),
    ]


def grouped_folds(groups, k: int, seed: int) -> list[np.ndarray]:
    """Split sample indices into k folds with no group spanning two folds."""
    groups = np.asarray(groups)
    unique = sorted(set(groups.tolist()))
    if len(unique) < k:
        raise FoldError(f"{len(unique)} groups cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(unique)))
    # round-robin over a shuffled group order keeps fold sizes balanced
    assignment = {unique[g]: i % k for i, g in enumerate(order)}
    folds = [[] for _ in range(k)]
    for idx, group in enumerate(groups):
        folds[assignment[group]].append(idx)
    return [np.array(fold, dtype=int) for fold in folds]


def _format_pm(mean: float, std: float) -> str:
    return f"{mean:.3f}+/-{std:.2f}"


@dataclass
class CvRow:
    family: str
    params: dict
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    f1_mean: float
    f1_std: float

    def as_dict(self) -> dict:
        return {
            "family": self.family,
            "params": {k: (None if v is None else v) for k, v in self.params.items()},
            "precision": _format_pm(self.precision_mean, self.precision_std),
            "recall": _format_pm(self.recall_mean, self.recall_std),
            "f1": _format_pm(self.f1_mean, self.f1_std),
            "f1_mean": self.f1_mean,
        }


@dataclass
class GridSearchResult:
    best_model: object
    best_family: str
    best_params: dict
    rows: list = field(default_factory=list)

    @property
    def best_row(self) -> CvRow:
        return next(
            r for r in self.rows if r.family == self.best_family and r.params == self.best_params
        )


def grid_search_cv(
    X, y, groups, grids: list[ClassifierGrid], k: int = 5, seed: int = 0
) -> GridSearchResult:
    """Evaluate every configuration on identical patient-grouped folds.

    The winner has the highest mean weighted F1 across folds; ties go to the
    configuration with fewer hyperparameters, then to grid order.  The winning
    configuration is refit on all data.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(list(y))
    if len(X) != len(y) or len(y) != len(list(groups)):
        raise ValueError("X, y and groups must align")
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise FoldError("cross-validation needs at least 2 classes")
    folds = grouped_folds(groups, k, seed)
    train_sets = []
    for i, fold in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        missing = set(classes) - set(y[train_idx].tolist())
        if missing:
            raise FoldError(
                f"class(es) {sorted(missing)} absent from the training side of fold {i}; "
                "reduce k or change the seed"
            )
        train_sets.append((train_idx, fold))

    rows = []
    best = None  # (negative f1, n_params, order) for min-comparison
    for order, (grid, params) in enumerate(
        (g, p) for g in grids for p in g.configurations()
    ):
        scores = {"precision": [], "recall": [], "f1": []}
        for train_idx, val_idx in train_sets:
            model = _BUILDERS[grid.family](params, seed)
            # tiny folds: a neighbor count above the fit size is a hard error
            if hasattr(model, "n_neighbors"):
                model.n_neighbors = min(model.n_neighbors, len(train_idx))
            model.fit(X[train_idx], y[train_idx])
            report = weighted_metrics(y[val_idx], model.predict(X[val_idx]), classes)
            scores["precision"].append(report.weighted_precision)
            scores["recall"].append(report.weighted_recall)
            scores["f1"].append(report.weighted_f1)
        row = CvRow(
            grid.family,
            dict(params),
            float(np.mean(scores["precision"])),
            float(np.std(scores["precision"])),
            float(np.mean(scores["recall"])),
            float(np.std(scores["recall"])),
            float(np.mean(scores["f1"])),
            float(np.std(scores["f1"])),
        )
        rows.append(row)
        key = (-row.f1_mean, len(params), order)
        if best is None or key < best[0]:
            best = (key, grid.family, dict(params))

    _, family, params = best
    final = _BUILDERS[family](params, seed)
    if hasattr(final, "n_neighbors"):
        final.n_neighbors = min(final.n_neighbors, len(X))
    final.fit(X, y)
    return GridSearchResult(final, family, params, rows)


# ---------------------------------------------------------------------------
# patient aggregation


@dataclass
class PatientPrediction:
    patient_id: str
    probability: float
    label: str  # cancer | non-cancer
    nodule_id: object = None
    flagged: bool = False  # True when no candidates were detected

    def as_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "probability": self.probability,
            "label": self.label,
            "nodule_id": self.nodule_id,
            "flagged": self.flagged,
        }


def aggregate_patient(nodule_probs, patient_id, threshold: float = 0.5) -> PatientPrediction:
    """Patient probability = the maximum over the patient's nodule probabilities.

    ``nodule_probs`` is a list of (nodule id, probability).  Ties go to the
    first nodule by id.  An empty list raises NoNodulesDetected; cohort-level
    callers convert that into a flagged non-cancer prediction.
    """
    pairs = list(nodule_probs)
    if not pairs:
        raise NoNodulesDetected(f"patient {patient_id}: no detected nodules to aggregate")
    best_id, best_p = min(pairs, key=lambda item: (-float(item[1]), item[0]))
    best_p = float(best_p)
    label = "cancer" if best_p >= threshold else "non-cancer"
    return PatientPrediction(patient_id, best_p, label, best_id)


def aggregate_cohort(per_patient: dict, threshold: float = 0.5) -> list[PatientPrediction]:
    """Aggregate every patient; empty candidate lists become flagged non-cancer."""
    out = []
    for patient_id in sorted(per_patient):
        try:
            out.append(aggregate_patient(per_patient[patient_id], patient_id, threshold))
        except NoNodulesDetected:
            out.append(PatientPrediction(patient_id, 0.0, "non-cancer", None, flagged=True))
    return out


# ---------------------------------------------------------------------------
# transfer head


def head_hidden_sizes(size: int) -> list[int]:
    """Candidate hidden-layer widths derived from the input width (floored)."""
    return sorted({max(1, size // 4), max(1, size // 3), max(1, size // 2), size})


def default_head_grid(size: int) -> ClassifierGrid:
    return ClassifierGrid(
        "dense-head",
        {
            "hidden_layer_sizes": [(h,) for h in head_hidden_sizes(size)],
            "activation": ["relu", "logistic"],
            "alpha": [1e-5, 1e-3, 1e-2, 1, 3, 10],
        },
    )


@dataclass
class TransferHeadModel:
    """Frozen malignancy network plus a dense cancer head.

    Inference concatenates the network's penultimate activations with the
    three baseline features and feeds the result to the trained head.
    """

    mal_model: TrainedModel
    head: MLPClassifier
    cv: GridSearchResult
    input_width: int

    def predict_proba(self, cubes, base_features) -> np.ndarray:
        base = np.asarray(base_features, dtype=float).reshape(len(cubes), 3)
        activations = penultimate_features(self.mal_model, cubes)
        X = np.hstack([activations, base])
        positive = list(self.head.classes_).index(1)
        return self.head.predict_proba(X)[:, positive]


def transfer_head(
    mal_model: TrainedModel,
    cubes,
    base_features,
    labels,
    groups,
    head_grid: ClassifierGrid | None = None,
    k: int = 5,
    seed: int = 0,
) -> TransferHeadModel:
    """Train a dense cancer head on frozen malignancy-network activations.

    The malignancy network is used for inference only, so its weights are
    bit-identical before and after head training.  The head is selected by
    patient-grouped cross-validation over hidden size, activation and
    regularization strength, then refit on all data.
    """
    if mal_model.spec.output_kind != "softmax":
        raise IntegrationError("transfer head requires a softmax malignancy model")
    base = np.asarray(base_features, dtype=float).reshape(len(cubes), 3)
    activations = penultimate_features(mal_model, cubes)
    X = np.hstack([activations, base])
    size = X.shape[1]
    if head_grid is None:
        head_grid = default_head_grid(size)
    y = np.asarray([int(bool(l)) for l in labels])
    result = grid_search_cv(X, y, groups, [head_grid], k=k, seed=seed)
    return TransferHeadModel(mal_model, result.best_model, result, size)
