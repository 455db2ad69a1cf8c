"""Pairwise-proximity-function SVM (ppfSVM) and k-NN over trajectory dissimilarities.

Each trajectory is represented by its vector of DTW dissimilarities to the
``m`` training trajectories; a one-vs-rest linear SVM is trained on the
standardized vectors.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import MetricsReport, _atomic_write, confusion_and_metrics
from .errors import DimensionMismatch, InsufficientClasses, InvalidParameter
from .geometry import DEFAULT_K, PsdPoint
from .trajectory import Trajectory, auto_zeta, dtw_distance, interpolate, pair_function, resample

FORMAT_NAME = "gramtraj-ppfsvm"
FORMAT_VERSION = 1
C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class DistanceSpec:
    """How two trajectories are compared."""

    k: float = DEFAULT_K
    distance: str = "closeness"
    epsilon: float | None = None
    use_dtw: bool = True

    def pair(self) -> Callable[[Trajectory, Trajectory], float]:
        return pair_function(self.k, self.distance, self.epsilon, self.use_dtw)

    def to_dict(self) -> dict:
        return {"k": self.k, "distance": self.distance, "epsilon": self.epsilon, "use_dtw": self.use_dtw}


@dataclass(frozen=True)
class ProximityMatrix:
    values: np.ndarray
    ids: tuple

    def __post_init__(self):
        v = self.values
        if v.shape[0] != v.shape[1] or v.shape[0] != len(self.ids):
            raise DimensionMismatch("proximity matrix must be square and match ids")


def _check_n(trajs):
    if len({t.n for t in trajs}) > 1:
        raise DimensionMismatch("trajectories have different landmark counts")


def _map_pairs(fn, pairs, threads):
    if threads <= 1 or len(pairs) < 2:
        return [fn(a, b) for a, b in pairs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), pairs))


def proximity(a: Trajectory, b: Trajectory, k: float = DEFAULT_K) -> float:
    """Proximity function between trajectories: the DTW dissimilarity."""
    return dtw_distance(a, b, k)


def proximity_matrix(trajs: Sequence[Trajectory], k: float = DEFAULT_K, threads: int = 1,
                     spec: DistanceSpec | None = None) -> ProximityMatrix:
    """Symmetric ``m x m`` matrix of pairwise proximities with zero diagonal.

    Only the upper triangle is evaluated; pairs may run on a thread pool, the
    assembly order is fixed so the result does not depend on ``threads``.
    """
    spec = spec or DistanceSpec(k=k)
    _check_n(trajs)
    m = len(trajs)
    idx = [(i, j) for i in range(m) for j in range(i + 1, m)]
    vals = _map_pairs(spec.pair(), [(trajs[i], trajs[j]) for i, j in idx], threads)
    out = np.zeros((m, m))
    for (i, j), v in zip(idx, vals):
        out[i, j] = out[j, i] = v
    return ProximityMatrix(out, tuple(t.id for t in trajs))


def cross_proximity(xs: Sequence[Trajectory], refs: Sequence[Trajectory], spec: DistanceSpec,
                    threads: int = 1) -> np.ndarray:
    """Rectangular matrix of proximities, rows ``xs`` and columns ``refs``."""
    _check_n(list(xs) + list(refs))
    pairs = [(x, r) for x in xs for r in refs]
    vals = _map_pairs(spec.pair(), pairs, threads)
    return np.asarray(vals, dtype=float).reshape(len(xs), len(refs))


def embed(x: Trajectory, model_refs: Sequence[Trajectory], k: float = DEFAULT_K,
          spec: DistanceSpec | None = None) -> np.ndarray:
    """Proximity vector of ``x`` to every reference trajectory."""
    spec = spec or DistanceSpec(k=k)
    return cross_proximity([x], model_refs, spec)[0]


# --------------------------------------------------------------------------
# linear SVM

@dataclass
class BinarySolution:
    w: np.ndarray
    b: float
    gap: float
    epochs: int


def _svm_dual_cd(x, y, C, seed, tol=1e-6, max_epochs=20000) -> BinarySolution:
    """L2-regularized hinge-loss SVM by dual coordinate descent.

    Minimizes ``0.5 ||(w, b)||^2 + C sum max(0, 1 - y (w.x + b))``; the bias is
    handled as an extra constant feature. Stops when the duality gap is at
    most ``tol`` or after ``max_epochs`` passes.
    """
    xa = np.hstack([x, np.ones((x.shape[0], 1))])
    m = xa.shape[0]
    qd = np.einsum("ij,ij->i", xa, xa)
    alpha = np.zeros(m)
    w = np.zeros(xa.shape[1])
    rng = np.random.default_rng(seed)
    gap = math.inf
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        for i in rng.permutation(m):
            g = y[i] * (w @ xa[i]) - 1.0
            a_old = alpha[i]
            if a_old == 0.0:
                pg = min(g, 0.0)
            elif a_old == C:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0 and qd[i] > 0:
                a_new = min(max(a_old - g / qd[i], 0.0), C)
                w += (a_new - a_old) * y[i] * xa[i]
                alpha[i] = a_new
        ww = w @ w
        primal = 0.5 * ww + C * np.maximum(0.0, 1.0 - y * (xa @ w)).sum()
        dual = alpha.sum() - 0.5 * ww
        gap = primal - dual
        if gap <= tol:
            break
    return BinarySolution(w[:-1].copy(), float(w[-1]), float(gap), epoch)


def _standardize_fit(p):
    mean = p.mean(axis=0)
    scale = p.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


@dataclass
class PpfSvmModel:
    """Trained ppfSVM: references, standardization, one-vs-rest weights."""

    references: list[Trajectory]
    classes: list[str]
    weights: np.ndarray
    biases: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    C: float
    spec: DistanceSpec = field(default_factory=DistanceSpec)
    zeta: tuple[float, float] | None = None
    seed: int = 0
    gaps: list[float] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise InsufficientClasses("a model needs at least two classes")
        if self.weights.shape != (len(self.classes), len(self.references)):
            raise DimensionMismatch("weights must have one row per class and one column per reference")

    def decision_function(self, phi) -> np.ndarray:
        """Per-class scores for raw proximity vectors ``phi`` (shape ``(m,)`` or ``(q, m)``)."""
        phi = np.asarray(phi, dtype=float)
        return ((phi - self.mean) / self.scale) @ self.weights.T + self.biases

    def prepare(self, x: Trajectory) -> Trajectory:
        """Apply the model's re-sampling (if any) and lockstep length to a new input."""
        if self.zeta is not None:
            x = resample(x, self.zeta[0], self.zeta[1], self.spec.k)
        if not self.spec.use_dtw:
            x = interpolate(x, len(self.references[0]))
        return x

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "hyperparameters": {"C": self.C, **self.spec.to_dict()},
            "training": {"seed": self.seed, "zeta": list(self.zeta) if self.zeta else None,
                         "duality_gaps": self.gaps, "epochs": self.epochs},
            "classes": list(self.classes),
            "standardization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "references": [
                {
                    "id": t.id,
                    "label": t.label,
                    "n": t.n,
                    "length": len(t),
                    "bases": t.bases.tolist(),
                    "shapes": t.shapes.tolist(),
                }
                for t in self.references
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        _atomic_write(Path(path), self.dumps())

    @classmethod
    def from_dict(cls, d: dict) -> "PpfSvmModel":
        if d.get("format") != FORMAT_NAME:
            raise InvalidParameter("not a ppfSVM model file")
        if d.get("version") != FORMAT_VERSION:
            raise InvalidParameter(f"unsupported model version {d.get('version')}")
        hp = dict(d["hyperparameters"])
        C = hp.pop("C")
        refs = []
        for r in d["references"]:
            pts = [PsdPoint(np.asarray(u), np.asarray(s)) for u, s in zip(r["bases"], r["shapes"])]
            refs.append(Trajectory(tuple(pts), id=r["id"], label=r["label"]))
        tr = d["training"]
        return cls(
            references=refs,
            classes=list(d["classes"]),
            weights=np.asarray(d["weights"], dtype=float).reshape(len(d["classes"]), len(refs)),
            biases=np.asarray(d["biases"], dtype=float),
            mean=np.asarray(d["standardization"]["mean"], dtype=float),
            scale=np.asarray(d["standardization"]["scale"], dtype=float),
            C=C,
            spec=DistanceSpec(**hp),
            zeta=tuple(tr["zeta"]) if tr["zeta"] else None,
            seed=tr["seed"],
            gaps=list(tr["duality_gaps"]),
            epochs=list(tr["epochs"]),
        )

    @classmethod
    def load(cls, path) -> "PpfSvmModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _class_list(labels):
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise InsufficientClasses(f"need at least two classes, got {classes}")
    return classes


def fit_ppfsvm(p: np.ndarray, labels: Sequence[str], C: float = 1.0, seed: int = 0, tol: float = 1e-6):
    """One-vs-rest linear SVMs on the rows of a precomputed proximity matrix.

    Returns ``(classes, weights, biases, mean, scale, gaps, epochs)``. Every
    binary problem is solved with the same coordinate order, so renaming the
    classes only permutes the output.
    """
    if not C > 0:
        raise InvalidParameter(f"C must be positive, got {C}")
    p = np.asarray(p, dtype=float)
    labels = list(labels)
    if p.shape[0] != len(labels):
        raise DimensionMismatch("one label per proximity row required")
    classes = _class_list(labels)
    mean, scale = _standardize_fit(p)
    x = (p - mean) / scale
    lab = np.asarray(labels, dtype=object)
    sols = [_svm_dual_cd(x, np.where(lab == c, 1.0, -1.0), C, seed, tol) for c in classes]
    weights = np.stack([s.w for s in sols])
    biases = np.array([s.b for s in sols])
    return classes, weights, biases, mean, scale, [s.gap for s in sols], [s.epochs for s in sols]


def _stratified_folds(labels, folds, seed):
    """Fold index per sample: per-class shuffles dealt round-robin across folds."""
    rng = np.random.default_rng(seed)
    labels = list(labels)
    out = np.empty(len(labels), dtype=int)
    pos = 0
    for c in sorted(set(labels)):
        idx = np.flatnonzero(np.asarray(labels, dtype=object) == c)
        idx = idx[rng.permutation(len(idx))]
        for i in idx:
            out[i] = pos % folds
            pos += 1
    return out


def select_C(p: np.ndarray, labels: Sequence[str], seed: int = 0, grid=C_GRID, folds: int = 3) -> float:
    """Pick C from ``grid`` by inner stratified cross-validation on a proximity matrix.

    Inner folds use only their own training columns as features. Ties go to
    the smaller C.
    """
    labels = list(labels)
    assign = _stratified_folds(labels, min(folds, len(labels)), seed)
    best_C, best_acc = grid[0], -1.0
    for C in grid:
        correct = 0
        for f in sorted(set(assign.tolist())):
            tr = np.flatnonzero(assign != f)
            te = np.flatnonzero(assign == f)
            tr_labels = [labels[i] for i in tr]
            if len(set(tr_labels)) < 2:
                continue
            classes, w, b, mean, scale, _, _ = fit_ppfsvm(p[np.ix_(tr, tr)], tr_labels, C, seed)
            scores = ((p[np.ix_(te, tr)] - mean) / scale) @ w.T + b
            correct += sum(classes[int(np.argmax(s))] == labels[i] for s, i in zip(scores, te))
        acc = correct / len(labels)
        if acc > best_acc:
            best_C, best_acc = C, acc
    return best_C


def train_ppfsvm(train: Sequence[Trajectory], k: float = DEFAULT_K, C: float | str = 1.0, seed: int = 0,
                 spec: DistanceSpec | None = None, proximity: np.ndarray | None = None,
                 zeta: tuple[float, float] | None = None, threads: int = 1) -> PpfSvmModel:
    """Train a ppfSVM on labeled trajectories.

    ``train`` must already be re-sampled if ``zeta`` is given; ``zeta`` is only
    recorded so that :meth:`PpfSvmModel.prepare` can treat test inputs the
    same way. ``C="auto"`` selects C by inner cross-validation.
    """
    spec = spec or DistanceSpec(k=k)
    train = list(train)
    if any(t.label is None for t in train):
        raise InvalidParameter("every training trajectory needs a label")
    labels = [t.label for t in train]
    _class_list(labels)
    if proximity is None:
        proximity = proximity_matrix(train, spec=spec, threads=threads).values
    if C == "auto":
        C = select_C(proximity, labels, seed)
    classes, w, b, mean, scale, gaps, epochs = fit_ppfsvm(proximity, labels, float(C), seed)
    return PpfSvmModel(train, classes, w, b, mean, scale, float(C), spec, zeta, seed, gaps, epochs)


def predict(model: PpfSvmModel, x: Trajectory, threads: int = 1):
    """Return ``(label, scores)`` for one trajectory; ties go to the earlier class."""
    if x.n != model.references[0].n:
        raise DimensionMismatch(f"input has n={x.n}, model expects n={model.references[0].n}")
    x = model.prepare(x)
    phi = cross_proximity([x], model.references, model.spec, threads)[0]
    scores = model.decision_function(phi)
    return model.classes[int(np.argmax(scores))], scores


# --------------------------------------------------------------------------
# k-NN baseline

def knn_vote(dists, labels: Sequence[str], K: int) -> str:
    """Majority vote among the K smallest distances.

    Distance ties keep training order; vote ties go to the class with the
    smallest mean distance among its voters, then to the earlier class name.
    """
    dists = np.asarray(dists, dtype=float)
    if not 1 <= K <= len(dists):
        raise InvalidParameter(f"K must be in [1, {len(dists)}], got {K}")
    nearest = np.argsort(dists, kind="stable")[:K]
    votes: dict[str, list[float]] = {}
    for i in nearest:
        votes.setdefault(labels[i], []).append(float(dists[i]))
    top = max(len(v) for v in votes.values())
    tied = sorted(c for c, v in votes.items() if len(v) == top)
    return min(tied, key=lambda c: (np.mean(votes[c]), c))


def knn_predict(train: Sequence[Trajectory], x: Trajectory, K: int = 1, k: float = DEFAULT_K,
                spec: DistanceSpec | None = None) -> str:
    """Label of ``x`` by K-nearest-neighbour vote under the DTW dissimilarity."""
    spec = spec or DistanceSpec(k=k)
    if not 1 <= K <= len(train):
        raise InvalidParameter(f"K must be in [1, {len(train)}], got {K}")
    d = cross_proximity([x], train, spec)[0]
    return knn_vote(d, [t.label for t in train], K)


# --------------------------------------------------------------------------
# cross-validation

@dataclass(frozen=True)
class ClassifierSpec:
    kind: str = "ppfsvm"
    K: int = 1
    C: float | str = 1.0

    def name(self) -> str:
        return f"knn(K={self.K})" if self.kind == "knn" else f"ppfsvm(C={self.C})"


@dataclass
class FoldData:
    index: int
    train: np.ndarray
    test: np.ndarray
    p_train: np.ndarray
    p_test: np.ndarray
    zeta: tuple[float, float] | None


def fold_proximities(trajs: Sequence[Trajectory], folds: int, seed: int = 0,
                     spec: DistanceSpec = DistanceSpec(), resampling: bool = True,
                     zeta: tuple[float, float] | None = None, threads: int = 1):
    """Yield train/test proximity blocks for stratified folds.

    With ``resampling`` and no fixed ``zeta``, thresholds come from the
    training split of each fold only and are applied to both splits. Without
    DTW, every trajectory is interpolated to the longest training length.
    """
    labels = [t.label for t in trajs]
    if folds < 2 or folds > len(trajs):
        raise InvalidParameter(f"folds must be in [2, {len(trajs)}], got {folds}")
    assign = _stratified_folds(labels, folds, seed)
    shared = None
    for f in range(folds):
        tr = np.flatnonzero(assign != f)
        te = np.flatnonzero(assign == f)
        fz = None
        work = list(trajs)
        if resampling:
            fz = zeta or auto_zeta([trajs[i] for i in tr], spec.k)
            work = [resample(t, fz[0], fz[1], spec.k) for t in work]
        if not spec.use_dtw:
            length = max(len(work[i]) for i in tr)
            work = [interpolate(t, length) for t in work]
        if not resampling and spec.use_dtw:
            # fold-independent trajectories: one full matrix serves all folds
            if shared is None:
                shared = proximity_matrix(work, spec=spec, threads=threads).values
            p_tr, p_te = shared[np.ix_(tr, tr)], shared[np.ix_(te, tr)]
        else:
            p_tr = proximity_matrix([work[i] for i in tr], spec=spec, threads=threads).values
            p_te = cross_proximity([work[i] for i in te], [work[i] for i in tr], spec, threads)
        yield FoldData(f, tr, te, p_tr, p_te, fz)


def cross_validate_many(trajs: Sequence[Trajectory], folds: int, classifiers: Sequence[ClassifierSpec],
                        seed: int = 0, spec: DistanceSpec = DistanceSpec(), resampling: bool = True,
                        zeta: tuple[float, float] | None = None, threads: int = 1) -> dict[str, MetricsReport]:
    """Evaluate several classifiers on the same folds and proximities."""
    trajs = list(trajs)
    if any(t.label is None for t in trajs):
        raise InvalidParameter("cross-validation needs labeled trajectories")
    labels = [t.label for t in trajs]
    classes = _class_list(labels)
    for c in classifiers:
        if c.kind not in ("ppfsvm", "knn"):
            raise InvalidParameter(f"unknown classifier {c.kind!r}")
    preds = {c: [None] * len(trajs) for c in classifiers}
    fold_of = np.empty(len(trajs), dtype=int)
    fold_meta = []
    for fd in fold_proximities(trajs, folds, seed, spec, resampling, zeta, threads):
        tr_labels = [labels[i] for i in fd.train]
        fold_of[fd.test] = fd.index
        meta = {"fold": fd.index, "zeta": list(fd.zeta) if fd.zeta else None}
        for c in classifiers:
            if c.kind == "knn":
                for row, i in zip(fd.p_test, fd.test):
                    preds[c][i] = knn_vote(row, tr_labels, c.K)
                continue
            C = select_C(fd.p_train, tr_labels, seed) if c.C == "auto" else float(c.C)
            cls, w, b, mean, scale, _, _ = fit_ppfsvm(fd.p_train, tr_labels, C, seed)
            scores = ((fd.p_test - mean) / scale) @ w.T + b
            for s, i in zip(scores, fd.test):
                preds[c][i] = cls[int(np.argmax(s))]
            meta[f"C[{c.name()}]"] = C
        fold_meta.append(meta)
    reports = {}
    for c in classifiers:
        rep = confusion_and_metrics(preds[c], labels, classes, fold_of)
        rep.metadata = {
            "classifier": c.name(),
            "distance": spec.to_dict(),
            "resampling": resampling,
            "folds": folds,
            "seed": seed,
            "fold_settings": fold_meta,
        }
        reports[c.name()] = rep
    return reports


def cross_validate(trajs: Sequence[Trajectory], folds: int = 5, classifier: ClassifierSpec = ClassifierSpec(),
                   seed: int = 0, spec: DistanceSpec = DistanceSpec(), resampling: bool = True,
                   zeta: tuple[float, float] | None = None, threads: int = 1) -> MetricsReport:
    """Stratified k-fold evaluation of one classifier; deterministic given ``seed``."""
    return next(iter(cross_validate_many(trajs, folds, [classifier], seed, spec, resampling, zeta,
                                         threads).values()))
