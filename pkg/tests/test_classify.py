import json

import numpy as np
import pytest

from conftest import clean_set, random_trajectory, rigid
from gramtraj.classify import (
    ClassifierSpec,
    DistanceSpec,
    PpfSvmModel,
    _stratified_folds,
    _svm_dual_cd,
    cross_proximity,
    cross_validate,
    cross_validate_many,
    embed,
    fit_ppfsvm,
    knn_predict,
    knn_vote,
    predict,
    proximity,
    proximity_matrix,
    select_C,
    train_ppfsvm,
)
from gramtraj.errors import DimensionMismatch, InsufficientClasses, InvalidParameter
from gramtraj.trajectory import build_trajectory, dtw_distance


@pytest.fixture(scope="module")
def clean():
    return clean_set()


# ---------------------------------------------------------------- proximity

def test_proximity_definitional(rng):
    a, b = random_trajectory(rng, 5), random_trajectory(rng, 7)
    assert proximity(a, a) == pytest.approx(0, abs=1e-12)
    assert proximity(a, b, 0.2) == dtw_distance(a, b, 0.2)
    assert proximity(a, b) == pytest.approx(proximity(b, a), rel=1e-10)


def test_proximity_matrix(rng):
    a = random_trajectory(rng, 4)
    np.testing.assert_allclose(proximity_matrix([a, a]).values, np.zeros((2, 2)), atol=1e-12)
    trajs = [random_trajectory(rng, int(rng.integers(3, 7))) for _ in range(3)]
    p = proximity_matrix(trajs).values
    for i in range(3):
        for j in range(3):
            expected = 0.0 if i == j else proximity(trajs[i], trajs[j])
            assert p[i, j] == pytest.approx(expected, rel=1e-10, abs=1e-14)
    perm = [2, 0, 1]
    q = proximity_matrix([trajs[i] for i in perm]).values
    np.testing.assert_allclose(q, p[np.ix_(perm, perm)], rtol=1e-10)


def test_proximity_matrix_threads_identical(rng):
    trajs = [random_trajectory(rng, 5) for _ in range(6)]
    one = proximity_matrix(trajs, threads=1).values
    four = proximity_matrix(trajs, threads=4).values
    assert one.tobytes() == four.tobytes()


def test_proximity_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        proximity_matrix([random_trajectory(rng, 3, n=5), random_trajectory(rng, 3, n=6)])


def test_embed(rng):
    refs = [random_trajectory(rng, 4) for _ in range(4)]
    v = embed(refs[2], refs)
    assert v.shape == (4,) and v[2] == pytest.approx(0, abs=1e-12)
    stacked = np.stack([embed(r, refs) for r in refs])
    np.testing.assert_allclose(stacked, proximity_matrix(refs).values, atol=1e-12)


# --------------------------------------------------------------------- SVM

def svm_primal(x, y, C, w, b):
    return 0.5 * (w @ w + b * b) + C * np.maximum(0, 1 - y * (x @ w + b)).sum()


def test_svm_duality_gap(rng):
    x = rng.standard_normal((40, 5))
    y = np.where(x[:, 0] + 0.3 * rng.standard_normal(40) > 0, 1.0, -1.0)
    sol = _svm_dual_cd(x, y, 1.0, seed=0)
    assert sol.gap <= 1e-6
    assert sol.epochs < 20000


def test_svm_against_convex_solver(rng):
    cp = pytest.importorskip("cvxpy")
    x = rng.standard_normal((30, 4))
    y = np.where(x @ [1.0, -0.5, 0.2, 0.0] + 0.5 * rng.standard_normal(30) > 0, 1.0, -1.0)
    C = 0.7
    sol = _svm_dual_cd(x, y, C, seed=1)
    w, b = cp.Variable(4), cp.Variable()
    obj = 0.5 * cp.sum_squares(w) + 0.5 * cp.square(b) + C * cp.sum(cp.pos(1 - cp.multiply(y, x @ w + b)))
    problem = cp.Problem(cp.Minimize(obj))
    problem.solve()
    assert svm_primal(x, y, C, sol.w, sol.b) == pytest.approx(problem.value, rel=1e-5, abs=1e-6)
    np.testing.assert_allclose(sol.w, w.value, atol=1e-3)


def test_svm_separable():
    x = np.array([[0.0, 2.0], [0.5, 2.5], [0.0, -2.0], [-0.5, -2.5]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    sol = _svm_dual_cd(x, y, 100.0, seed=0)
    margins = y * (x @ sol.w + sol.b)
    assert np.all(margins >= 1 - 1e-4)


def test_train_ppfsvm_separable(clean):
    model = train_ppfsvm(clean, C=10.0)
    assert all(g <= 1e-6 for g in model.gaps)
    for t in clean:
        label, scores = predict(model, t)
        assert label == t.label
        assert scores.shape == (2,)


def test_train_ppfsvm_determinism(clean):
    a = train_ppfsvm(clean, seed=3)
    b = train_ppfsvm(list(clean), seed=3)
    probe = clean[1]
    np.testing.assert_allclose(predict(a, probe)[1], predict(b, probe)[1], atol=1e-8)
    assert a.dumps() == b.dumps()


def test_relabel_permutes_outputs(clean):
    p = proximity_matrix(clean).values
    labels = [t.label for t in clean]
    rename = {"class0": "zeta", "class1": "alpha"}
    c1, w1, b1, *_ = fit_ppfsvm(p, labels, 1.0)
    c2, w2, b2, *_ = fit_ppfsvm(p, [rename[x] for x in labels], 1.0)
    assert [rename[c] for c in c1] == c2[::-1]
    np.testing.assert_array_equal(w1, w2[::-1])
    np.testing.assert_array_equal(b1, b2[::-1])


def test_train_errors(clean):
    one = [t for t in clean if t.label == "class0"]
    with pytest.raises(InsufficientClasses):
        train_ppfsvm(one)
    with pytest.raises(InvalidParameter):
        fit_ppfsvm(np.zeros((4, 4)), ["a", "b", "a", "b"], C=0.0)
    model = train_ppfsvm(clean)
    other = build_trajectory([np.random.default_rng(0).standard_normal((7, 2)) for _ in range(3)])
    with pytest.raises(DimensionMismatch):
        predict(model, other)


def test_predict_rigid_invariance(clean, rng):
    model = train_ppfsvm(clean)
    probe = clean[3]
    frames = [rigid(p.landmarks(), rng) for p in probe.points]
    moved = build_trajectory(frames)
    np.testing.assert_allclose(predict(model, moved)[1], predict(model, probe)[1], atol=1e-6)


def test_model_round_trip(clean, tmp_path):
    model = train_ppfsvm(clean, C=2.0, zeta=(1e-4, 1.0))
    path = tmp_path / "m.json"
    model.save(path)
    loaded = PpfSvmModel.load(path)
    assert loaded.dumps() == model.dumps()
    probe = clean[5]
    np.testing.assert_array_equal(predict(loaded, probe)[1], predict(model, probe)[1])
    bad = json.loads(model.dumps())
    bad["version"] = 99
    with pytest.raises(InvalidParameter):
        PpfSvmModel.from_dict(bad)


def test_select_C_prefers_smaller_on_ties(clean):
    p = proximity_matrix(clean).values
    labels = [t.label for t in clean]
    # every grid value separates this set, so the smallest wins
    assert select_C(p, labels, grid=(0.5, 1.0, 10.0)) == 0.5


# --------------------------------------------------------------------- k-NN

def test_knn_vote_rules():
    labels = ["a", "b", "a", "b"]
    assert knn_vote([0.1, 0.2, 0.3, 0.4], labels, 1) == "a"
    # K = m on a balanced set: vote tie resolved by mean distance
    assert knn_vote([0.1, 0.2, 0.9, 0.3], labels, 4) == "b"
    assert knn_vote([0.1, 0.2, 0.3, 0.2], labels, 4) == "a"
    # identical means: earlier class name
    assert knn_vote([1.0, 1.0, 1.0, 1.0], labels, 4) == "a"
    # equal distances keep training order
    assert knn_vote([0.5, 0.5, 0.5, 0.5], ["b", "a", "a", "b"], 1) == "b"
    for K in (0, 5):
        with pytest.raises(InvalidParameter):
            knn_vote([0.1, 0.2, 0.3, 0.4], labels, K)


def test_knn_predict(clean):
    for t in clean[:4]:
        assert knn_predict(clean, t, K=1) == t.label
    x = clean[0]
    train = clean[1:]
    d = np.array([dtw_distance(x, r) for r in train])
    order = sorted(range(len(train)), key=lambda i: (d[i], i))[:3]
    votes = [train[i].label for i in order]
    expected = max(sorted(set(votes)), key=votes.count)
    assert knn_predict(train, x, K=3) == expected
    with pytest.raises(InvalidParameter):
        knn_predict(train, x, K=len(train) + 1)


# ---------------------------------------------------------- cross-validation

def test_stratified_folds():
    labels = ["a"] * 6 + ["b"] * 4
    f = _stratified_folds(labels, 2, seed=0)
    assert sorted(np.bincount(f)) == [5, 5]
    for c in "ab":
        per = np.bincount(f[[i for i, x in enumerate(labels) if x == c]], minlength=2)
        assert per.max() - per.min() <= 1
    np.testing.assert_array_equal(f, _stratified_folds(labels, 2, seed=0))


def test_cross_validate_separable(clean):
    for clf in (ClassifierSpec(), ClassifierSpec("knn", K=1)):
        rep = cross_validate(clean, folds=3, classifier=clf, seed=0)
        assert rep.accuracy == 100.0
        assert np.count_nonzero(rep.counts - np.diag(np.diag(rep.counts))) == 0
        assert len(rep.fold_accuracies) == 3


def test_cross_validate_leave_one_out():
    tiny = clean_set(per_class=3)
    rep = cross_validate(tiny, folds=len(tiny), classifier=ClassifierSpec("knn", K=1), resampling=False)
    assert len(rep.fold_accuracies) == len(tiny)
    assert rep.counts.sum() == len(tiny)


def test_cross_validate_deterministic(clean):
    kw = dict(folds=3, classifier=ClassifierSpec(C="auto"), seed=4)
    a = cross_validate(clean, **kw)
    b = cross_validate(clean, **kw)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    c = cross_validate(clean, threads=3, **kw)
    assert json.dumps(a.to_dict()) == json.dumps(c.to_dict())


def test_cross_validate_variants(clean):
    clfs = [ClassifierSpec(), ClassifierSpec("knn", K=3)]
    for spec, rs in ((DistanceSpec(use_dtw=False), True), (DistanceSpec(), False),
                     (DistanceSpec(distance="flat"), False)):
        reps = cross_validate_many(clean, 3, clfs, 0, spec, rs)
        assert set(reps) == {"ppfsvm(C=1.0)", "knn(K=3)"}
        for rep in reps.values():
            assert rep.metadata["resampling"] == rs
            assert rep.counts.sum() == len(clean)


def test_cross_validate_errors(clean):
    with pytest.raises(InvalidParameter):
        cross_validate(clean, folds=1)
    with pytest.raises(InvalidParameter):
        cross_validate(clean, classifier=ClassifierSpec("tree"))


def test_cross_proximity_shape(clean):
    spec = DistanceSpec()
    p = cross_proximity(clean[:2], clean[2:5], spec)
    assert p.shape == (2, 3)
    assert p[1, 2] == dtw_distance(clean[1], clean[4])
