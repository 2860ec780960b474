"""Per-class Gaussian density models and likelihood-ratio scoring.

Each age class gets a multivariate Gaussian fitted to the penultimate-layer
embeddings of its training samples (biased mean and covariance, i.e. the
1/n normalization). Covariances are regularized with trace-scaled shrinkage
plus a small absolute floor so rank-deficient classes still factor.

A sample's class-conditional log-density is evaluated through the cached
Cholesky factor (triangular solve, never an explicit inverse):

    log N(x; mu, sigma) = -(d/2) log(2 pi) - (1/2) log|sigma|
                          - (1/2) ||L^-1 (x - mu)||^2,   sigma = L L^T

The likelihood-ratio score contrasts the best class against the runner-up
field: llr = f* - mean of the top-k log-densities among the other classes.
Samples that sit between classes (ambiguous identity) score low; samples
that clearly belong to one class score high. For unlabeled inputs the
contrast set excludes the predicted class; pass ``true_class`` to exclude a
known label instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from . import __version__
from .curation import nearest_rank_quantile
from .errors import ConfigError, DataError, NumericError
from .manifest import EmbeddingTable

DEFAULT_SHRINKAGE = 1e-3
COV_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)

MODEL_FORMAT = "curaug-ood-model"


class LlrScore(NamedTuple):
    """Scored sample: likelihood-ratio value and the argmax class."""

    id: str
    llr: float
    predicted_class: int


@dataclass
class GaussianClassModel:
    """Gaussian moments for one class, with the Cholesky factor cached."""

    class_id: int
    mu: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    chol_lower: np.ndarray = field(repr=False)
    log_det: float
    sample_count: int

    @classmethod
    def from_moments(
        cls,
        class_id: int,
        mu: np.ndarray,
        sigma: np.ndarray,
        sample_count: int,
    ) -> "GaussianClassModel":
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise DataError(
                f"class {class_id}: mu shape {mu.shape} does not match "
                f"sigma shape {sigma.shape}"
            )
        if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
            raise NumericError(f"class {class_id}: non-finite moments")
        try:
            chol = scipy.linalg.cholesky(sigma, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(
                f"degenerate class covariance for class {class_id}: {exc}"
            ) from exc
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(
            class_id=class_id,
            mu=mu,
            sigma=sigma,
            chol_lower=chol,
            log_det=log_det,
            sample_count=sample_count,
        )

    @property
    def dim(self) -> int:
        return int(self.mu.size)


@dataclass
class OodModel:
    """All class Gaussians plus the training-set score distribution."""

    classes: list[GaussianClassModel]
    k: int
    shrinkage: float
    train_llr: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.classes[0].dim

    def class_ids(self) -> list[int]:
        return [c.class_id for c in self.classes]


def log_density(model: GaussianClassModel, x: np.ndarray) -> float:
    """Class-conditional Gaussian log-density of a single vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.mu.shape:
        raise DataError(
            f"dimension mismatch: vector has shape {x.shape}, "
            f"model has dim {model.dim}"
        )
    z = scipy.linalg.solve_triangular(model.chol_lower, x - model.mu, lower=True)
    return -0.5 * (model.dim * _LOG_2PI + model.log_det + float(z @ z))


def _density_matrix(model: OodModel, rows: np.ndarray) -> np.ndarray:
    """Per-class log-densities for a batch; columns follow model.classes."""
    n = rows.shape[0]
    out = np.empty((n, len(model.classes)), dtype=np.float64)
    for j, cm in enumerate(model.classes):
        diff = (rows - cm.mu).T
        z = scipy.linalg.solve_triangular(cm.chol_lower, diff, lower=True)
        quad = np.einsum("dn,dn->n", z, z)
        out[:, j] = -0.5 * (cm.dim * _LOG_2PI + cm.log_det + quad)
    if not np.isfinite(out).all():
        raise NumericError("non-finite log-density encountered")
    return out


def _llr_from_densities(
    model: OodModel, dens: np.ndarray, exclude_col: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reduce a density matrix to (llr, predicted column index) per row.

    exclude_col names the contrast-exclusion column per row; the best
    remaining k densities are averaged against the row maximum.
    """
    n, n_classes = dens.shape
    pred = np.argmax(dens, axis=1)  # first max wins: smallest class id
    best = dens[np.arange(n), pred]
    contrast = dens.copy()
    contrast[np.arange(n), exclude_col] = -np.inf
    top_k = np.partition(contrast, n_classes - model.k, axis=1)[:, n_classes - model.k :]
    llr = best - top_k.mean(axis=1)
    return llr, pred


def llr(model: OodModel, x: np.ndarray, true_class: int | None = None) -> LlrScore:
    """Score one vector. llr is finite for finite inputs; it is only
    guaranteed non-negative when the contrast set excludes the argmax
    (the default, unlabeled case)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != model.dim:
        raise DataError(
            f"dimension mismatch: vector has shape {x.shape}, model has dim {model.dim}"
        )
    dens = _density_matrix(model, x[None, :])
    ids = model.class_ids()
    if true_class is None:
        exclude = np.argmax(dens, axis=1)
    else:
        if true_class not in ids:
            raise DataError(f"unknown class {true_class}")
        exclude = np.array([ids.index(true_class)])
    values, pred = _llr_from_densities(model, dens, exclude)
    return LlrScore(id="", llr=float(values[0]), predicted_class=ids[int(pred[0])])


def score_batch(model: OodModel, table: EmbeddingTable) -> list[LlrScore]:
    """Score every table row (unlabeled contrast). Empty table -> []."""
    if len(table) == 0:
        return []
    if table.dim != model.dim:
        raise DataError(
            f"dimension mismatch: table dim {table.dim}, model dim {model.dim}"
        )
    rows = np.asarray(table.rows, dtype=np.float64)
    dens = _density_matrix(model, rows)
    pred = np.argmax(dens, axis=1)
    values, pred = _llr_from_densities(model, dens, pred)
    ids = model.class_ids()
    return [
        LlrScore(id=rid, llr=float(v), predicted_class=ids[int(p)])
        for rid, v, p in zip(table.ids, values, pred)
    ]


def fit(
    table: EmbeddingTable,
    labels: Mapping[str, int],
    k: int | None = None,
    shrinkage: float = DEFAULT_SHRINKAGE,
    cov_floor: float = COV_FLOOR,
) -> OodModel:
    """Fit per-class Gaussians on labeled embeddings.

    Every table id needs a label. Each class needs at least two samples.
    k defaults to min(10, #classes - 1). Covariances are the biased
    estimate plus shrinkage * (trace/d) * I plus cov_floor * I; a class
    whose regularized covariance still fails to factor raises NumericError.
    train_llr holds the unlabeled-contrast scores of the training rows, in
    table order, so re-scoring the table reproduces it.
    """
    if len(table) == 0:
        raise DataError("cannot fit on an empty embedding table")
    missing = [rid for rid in table.ids if rid not in labels]
    if missing:
        raise DataError(f"no label for ids: {missing[:5]}")
    if shrinkage < 0:
        raise ConfigError(f"shrinkage must be non-negative, got {shrinkage}")
    if cov_floor < 0:
        raise ConfigError(f"cov_floor must be non-negative, got {cov_floor}")

    by_class: dict[int, list[int]] = {}
    for row, rid in enumerate(table.ids):
        by_class.setdefault(int(labels[rid]), []).append(row)
    class_ids = sorted(by_class)
    if len(class_ids) < 2:
        raise DataError("need at least two classes for contrast scoring")
    if k is None:
        k = min(10, len(class_ids) - 1)
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    if k > len(class_ids) - 1:
        raise ConfigError(
            f"k exceeds class count - 1: k={k}, classes={len(class_ids)}"
        )

    rows = np.asarray(table.rows, dtype=np.float64)
    d = table.dim
    classes: list[GaussianClassModel] = []
    for cid in class_ids:
        members = rows[by_class[cid]]
        if members.shape[0] < 2:
            raise DataError(
                f"class {cid} has {members.shape[0]} sample(s); need at least 2"
            )
        mu = members.mean(axis=0)
        centered = members - mu
        sigma = (centered.T @ centered) / members.shape[0]
        ridge = shrinkage * (np.trace(sigma) / d) + cov_floor
        sigma = sigma + ridge * np.eye(d)
        classes.append(
            GaussianClassModel.from_moments(cid, mu, sigma, members.shape[0])
        )

    model = OodModel(classes=classes, k=k, shrinkage=shrinkage, train_llr=np.empty(0))
    train_scores = score_batch(model, table)
    model.train_llr = np.array([s.llr for s in train_scores], dtype=np.float64)
    return model


def train_quantile(model: OodModel, q: float) -> float:
    """Nearest-rank quantile of the training llr distribution (q=0 -> min)."""
    if model.train_llr.size == 0:
        raise DataError("model carries no training scores")
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"quantile q out of range [0, 1], got {q}")
    if q == 0.0:
        return float(model.train_llr.min())
    return float(nearest_rank_quantile(model.train_llr.tolist(), q))


# ---------------------------------------------------------------------------
# persistence


def _sigma_lower(sigma: np.ndarray) -> list[float]:
    d = sigma.shape[0]
    return [float(sigma[i, j]) for i in range(d) for j in range(i + 1)]


def _sigma_full(lower: Sequence[float], d: int) -> np.ndarray:
    expected = d * (d + 1) // 2
    if len(lower) != expected:
        raise DataError(
            f"sigma_lower has {len(lower)} values, expected {expected} for dim {d}"
        )
    sigma = np.zeros((d, d), dtype=np.float64)
    it = iter(lower)
    for i in range(d):
        for j in range(i + 1):
            sigma[i, j] = next(it)
            sigma[j, i] = sigma[i, j]
    return sigma


def save_model(model: OodModel, path: str, meta: dict | None = None) -> None:
    """Serialize the model to JSON (floats round-trip via repr)."""
    doc: dict[str, object] = {
        "format": MODEL_FORMAT,
        "version": __version__,
        "dim": model.dim,
        "k": model.k,
        "shrinkage": model.shrinkage,
        "classes": [
            {
                "class_id": cm.class_id,
                "sample_count": cm.sample_count,
                "mu": [float(v) for v in cm.mu],
                "sigma_lower": _sigma_lower(cm.sigma),
            }
            for cm in model.classes
        ],
        "train_llr": [float(v) for v in model.train_llr],
    }
    if meta:
        doc["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> OodModel:
    """Load a model file; Cholesky factors are recomputed from the stored
    covariances, so rescoring reproduces the original scores."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"model file is not valid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError(f"not a model file: {path}")
    for key in ("dim", "k", "shrinkage", "classes", "train_llr"):
        if key not in doc:
            raise DataError(f"model file missing '{key}'")
    d = int(doc["dim"])
    classes = []
    for entry in doc["classes"]:
        classes.append(
            GaussianClassModel.from_moments(
                int(entry["class_id"]),
                np.asarray(entry["mu"], dtype=np.float64),
                _sigma_full(entry["sigma_lower"], d),
                int(entry["sample_count"]),
            )
        )
    if len(classes) < 2:
        raise DataError("model file must carry at least two classes")
    classes.sort(key=lambda c: c.class_id)
    model = OodModel(
        classes=classes,
        k=int(doc["k"]),
        shrinkage=float(doc["shrinkage"]),
        train_llr=np.asarray(doc["train_llr"], dtype=np.float64),
    )
    if model.k > len(classes) - 1:
        raise DataError("model file k exceeds class count - 1")
    return model


def write_scores(scores: Sequence[LlrScore], path: str) -> None:
    """Score table as CSV: id,llr,predicted_class (llr via repr, exact)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,llr,predicted_class\n")
        for s in scores:
            fh.write(f"{s.id},{s.llr!r},{s.predicted_class}\n")


def read_scores(path: str) -> list[LlrScore]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "id,llr,predicted_class":
            raise DataError(f"unexpected score header: {header!r}")
        out = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != 3:
                raise DataError(f"malformed score row, line {line_no}")
            try:
                out.append(LlrScore(parts[0], float(parts[1]), int(parts[2])))
            except ValueError as exc:
                raise DataError(f"malformed score row, line {line_no}: {exc}") from exc
    return out
