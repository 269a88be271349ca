"""Acceptance suite: one test per acceptance criterion, at its stated tolerance.

Each test prints one PASS/FAIL line (visible with ``pytest -s`` or on
failure).  Statistical criteria use pinned seeds; their tolerances are
three-sigma binomial bands around the nominal rates.
"""

import json
import math

import numpy as np
import pytest
from scipy.stats import kstest

from _support import direct_membership_union, gaussian_blobs, linear_regression_bag
from conformal import (
    Bag,
    CombinedClassifier,
    ConformalClassifier,
    ConformalRegressor,
    CpConfig,
    IcpConfig,
    InductiveConformalClassifier,
    KnnClassifierMeasure,
    KnnConfig,
    KnnRegressionProvider,
    ModelOutputAdapterConfig,
    ModelOutputMeasure,
    NearestNeighborTaxonomy,
    RocPoint,
    RrcmConfig,
    SeededRng,
    VennPredictor,
    conformal_meta_hooks,
    constant_taxonomy,
    iso_precision_threshold,
    label_taxonomy,
    normalize_line,
    prediction_intervals,
    rocch,
    save_csv,
)
from conformal.cli import main as cli_main
from conformal.ncm import _pairwise_sq_dists

INF = math.inf


def report(criterion, description, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:2d}: {description}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared online runs (criteria 1 and 4)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def online_runs():
    """Five seeded 1000-step smoothed online runs: (error rate, true-label p-values)."""
    runs = []
    for seed in range(5):
        cp = ConformalClassifier(
            KnnClassifierMeasure(KnnConfig(k=1)), CpConfig(epsilons=(0.1,), smoothed=True)
        )
        cp.train(gaussian_blobs(10, seed=1000 + seed))
        rep, pvals = cp.score_online(
            gaussian_blobs(1000, seed=2000 + seed), SeededRng(seed), return_p_values=True
        )
        runs.append((rep.per_epsilon[0.1].err_rate, pvals))
    return runs


def test_criterion_01_online_exact_validity(online_runs):
    errs = [err for err, _ in online_runs]
    inside = sum(0.07 <= err <= 0.13 for err in errs)
    report(1, "smoothed online error rate in the 3-sigma band for >= 4 of 5 seeds",
           inside >= 4, f"errors={[round(e, 3) for e in errs]}")


def test_criterion_02_conservative_validity_offline():
    cp = ConformalClassifier(
        KnnClassifierMeasure(KnnConfig(k=1)), CpConfig(epsilons=(0.05, 0.1, 0.2))
    )
    cp.train(gaussian_blobs(1000, seed=3000))
    rep = cp.score(gaussian_blobs(2000, seed=3001))
    rates = {eps: stats.err_rate for eps, stats in rep.per_epsilon.items()}
    ok = all(rate <= eps + 0.03 for eps, rate in rates.items())
    report(2, "unsmoothed offline error rate <= epsilon + 0.03 at every level",
           ok, f"rates={ {e: round(r, 4) for e, r in rates.items()} }")


def test_criterion_03_nestedness():
    epsilons = (0.01, 0.05, 0.1, 0.25)
    cp = ConformalClassifier(
        KnnClassifierMeasure(KnnConfig(k=1)), CpConfig(epsilons=epsilons, smoothed=True)
    )
    cp.train(gaussian_blobs(100, seed=3100))
    predictions = cp.predict(gaussian_blobs(500, seed=3101).x, SeededRng(31))
    violations = 0
    for pred in predictions:
        for small, large in zip(epsilons, epsilons[1:]):
            if not set(pred.labels_at(large)) <= set(pred.labels_at(small)):
                violations += 1
    report(3, "prediction sets nested across 500 predictions x 4 levels",
           violations == 0, f"violations={violations}")


def test_criterion_04_smoothed_p_value_uniformity(online_runs):
    _, pvals = online_runs[0]
    result = kstest(pvals, "uniform")
    report(4, "online smoothed true-label p-values uniform (KS at 0.01)",
           result.pvalue > 0.01, f"KS p-value={result.pvalue:.4f} over {len(pvals)} steps")


# ---------------------------------------------------------------------------
# regression intervals
# ---------------------------------------------------------------------------


def test_criterion_05_sweep_equals_membership_oracle():
    rng = np.random.default_rng(50)
    checked = 0
    for trial in range(1000):
        n = int(rng.integers(1, 51))
        a = np.round(rng.uniform(-3, 3, size=n), 1)
        b = np.round(rng.uniform(-2, 2, size=n), 1)
        b[rng.random(n) < 0.25] = 0.0
        lines = [normalize_line(ai, bi) for ai, bi in zip(a, b)]
        new = normalize_line(round(rng.uniform(-2, 2), 1), round(rng.uniform(-2, 2), 1))
        eps_pair = tuple(sorted(rng.choice([0.05, 0.15, 0.3, 0.5, 0.75], 2, replace=False)))
        for hull in (False, True):
            got = prediction_intervals(lines, new, eps_pair, hull)
            for eps in eps_pair:
                want = direct_membership_union(lines, new, eps, hull)
                have = got.intervals_at(eps)
                assert len(have) == len(want), (trial, eps, hull, have, want)
                for (glo, ghi), (wlo, whi) in zip(have, want):
                    assert glo == pytest.approx(wlo, abs=1e-9)
                    assert ghi == pytest.approx(whi, abs=1e-9)
                checked += 1
    report(5, "interval sweep equals direct membership oracle (both hull modes)",
           True, f"{checked} union comparisons over 1000 instances")


def test_criterion_06_regression_online_validity():
    predictor = ConformalRegressor(
        KnnRegressionProvider(KnnConfig(k=3)), RrcmConfig(epsilons=(0.1,))
    )
    predictor.train(linear_regression_bag(20, seed=6000))
    rep = predictor.score_online(linear_regression_bag(500, seed=6001))
    miss = rep.per_epsilon[0.1].miss_rate
    report(6, "online regression miss rate within [0.05, 0.15] at epsilon 0.1",
           0.05 <= miss <= 0.15, f"miss rate={miss:.4f}")


# ---------------------------------------------------------------------------
# Mondrian conditioning
# ---------------------------------------------------------------------------


def _three_class_bag(n_per_class, seed):
    centers = ((0.0, 0.0), (2.0, 2.0), (-2.0, 2.0))
    labels = ("A", "B", "C")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for center, label in zip(centers, labels):
        xs.append(np.asarray(center) + rng.standard_normal((n_per_class, 2)))
        ys.extend([label] * n_per_class)
    x = np.vstack(xs)
    perm = rng.permutation(len(ys))
    return Bag.classification(x[perm], [ys[i] for i in perm], labels)


def test_criterion_07_mondrian_reduction_and_conditional_validity():
    # constant taxonomy reproduces unconditional p-values bit-exactly
    bag = gaussian_blobs(60, seed=7000)
    x_test = gaussian_blobs(25, seed=7001).x
    plain = ConformalClassifier(
        KnnClassifierMeasure(KnnConfig(k=1)), CpConfig(epsilons=(0.1,), smoothed=True)
    ).train(bag)
    conditioned = ConformalClassifier(
        KnnClassifierMeasure(KnnConfig(k=1)),
        CpConfig(epsilons=(0.1,), smoothed=True, taxonomy=constant_taxonomy),
    ).train(bag)
    exact_match = np.array_equal(
        plain.p_values(x_test, SeededRng(7)).values,
        conditioned.p_values(x_test, SeededRng(7)).values,
    )

    # label-conditional online errors stay inside each class's band
    cp = ConformalClassifier(
        KnnClassifierMeasure(KnnConfig(k=1)),
        CpConfig(epsilons=(0.1,), smoothed=True, taxonomy=label_taxonomy),
    )
    cp.train(_three_class_bag(10, seed=8000))
    stream = _three_class_bag(320, seed=8001)
    rng = SeededRng(3)
    errors = {label: [0, 0] for label in stream.label_space}
    for i in range(len(stream)):
        x, y = stream.x[i], stream.y[i]
        prediction = cp.predict(x[None, :], rng)[0]
        errors[y][0] += y not in prediction.labels_at(0.1)
        errors[y][1] += 1
        cp.train(Bag.classification(x[None, :], (y,), stream.label_space))
    per_class = {}
    inside = True
    for label, (wrong, count) in errors.items():
        rate = wrong / count
        band = 3.0 * math.sqrt(0.1 * 0.9 / count)
        per_class[label] = round(rate, 4)
        inside = inside and abs(rate - 0.1) <= band
    report(7, "constant taxonomy bit-exact; per-class online error in 3-sigma band",
           exact_match and inside, f"exact={exact_match}, per-class rates={per_class}")


# ---------------------------------------------------------------------------
# Venn predictors
# ---------------------------------------------------------------------------


def _enumerated_matrix(predictor, x):
    bag = predictor.bag
    labels = bag.label_space
    contains = any(np.array_equal(row, x) for row in bag.x)
    rows = []
    for hypothesis in labels:
        category = predictor.taxonomy.category(x, hypothesis, contains)
        members = [hypothesis]
        for xi, yi in zip(bag.x, bag.y):
            if predictor.taxonomy.category(xi, yi, True) == category:
                members.append(yi)
        rows.append([sum(m == lbl for m in members) / len(members) for lbl in labels])
    return np.array(rows)


def test_criterion_08_venn_correctness():
    predictor = VennPredictor(NearestNeighborTaxonomy()).train(gaussian_blobs(40, seed=8100))
    sums_ok = True
    for x in gaussian_blobs(200, seed=8101).x:
        rows = predictor.matrix(x).rows
        sums_ok = sums_ok and np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)

    oracle_ok = True
    for seed in range(10):
        rng = np.random.default_rng(8200 + seed)
        small = VennPredictor(NearestNeighborTaxonomy()).train(
            gaussian_blobs(int(rng.integers(2, 11)), seed=8300 + seed)
        )
        for x in gaussian_blobs(5, seed=8400 + seed).x:
            oracle_ok = oracle_ok and np.allclose(
                small.matrix(x).rows, _enumerated_matrix(small, x), atol=1e-12
            )

    empty = VennPredictor(NearestNeighborTaxonomy()).train(Bag(np.empty((0, 2)), (), ("A", "B")))
    identity_ok = np.array_equal(empty.matrix(np.zeros(2)).rows, np.eye(2))

    report(8, "Venn rows sum to 1; enumeration oracle matches; empty bag is identity",
           sums_ok and oracle_ok and identity_ok,
           f"sums={sums_ok}, oracle={oracle_ok}, identity={identity_ok}")


# ---------------------------------------------------------------------------
# ROC hull and iso-precision
# ---------------------------------------------------------------------------


def _all_pairs_upper_hull(points):
    pts = sorted({(p.fpr, p.tpr) for p in points})
    keep = []
    for x, y in pts:
        if (x, y) in ((0.0, 0.0), (1.0, 1.0)):
            keep.append((x, y))
            continue
        dominated = any(qx == x and qy > y for qx, qy in pts)
        if not dominated:
            for qx, qy in pts:
                if dominated:
                    break
                for rx, ry in pts:
                    if qx < x < rx:
                        height = qy + (ry - qy) * (x - qx) / (rx - qx)
                        if height >= y - 1e-12:
                            dominated = True
                            break
        if not dominated:
            keep.append((x, y))
    return keep


def test_criterion_09_rocch_oracle_and_iso_threshold():
    rng = np.random.default_rng(90)
    hull_ok = True
    for _ in range(200):
        raw = rng.integers(0, 9, size=(int(rng.integers(2, 23)), 2)) / 8.0
        points = (
            [RocPoint(0.0, 0.0, INF)]
            + [RocPoint(x, y, 1.0) for x, y in raw]
            + [RocPoint(1.0, 1.0, 0.1)]
        )
        got = [(p.fpr, p.tpr) for p in rocch(points)]
        hull_ok = hull_ok and got == _all_pairs_upper_hull(points)

    hull = [RocPoint(0.0, 0.0, INF), RocPoint(0.2, 0.8, 2.5), RocPoint(1.0, 1.0, 0.3)]
    threshold = iso_precision_threshold(hull, 0.8, n_neg=10, n_pos=10)
    iso_ok = threshold.t == 2.5 and not threshold.warning

    report(9, "monotone-chain hull equals all-pairs oracle; worked isometric picks the vertex",
           hull_ok and iso_ok, f"hulls={hull_ok}, threshold={threshold.t}")


# ---------------------------------------------------------------------------
# combined classifier precision
# ---------------------------------------------------------------------------


class _NearestBase:
    def fit(self, x, y):
        self._x = np.asarray(x, dtype=float)
        self._y = list(y)

    def predict(self, x):
        d = _pairwise_sq_dists(np.asarray(x, dtype=float), self._x)
        return [self._y[j] for j in d.argmin(axis=1)]


def test_criterion_10_meta_precision():
    centers = ((0.0, 0.0), (1.15, 1.15))  # 1-NN lands near 70% accuracy here
    train = gaussian_blobs(600, seed=7000, centers=centers)
    test = gaussian_blobs(400, seed=7500, centers=centers)
    base = _NearestBase()
    hooks = conformal_meta_hooks(
        base.fit, base.predict, lambda: KnnClassifierMeasure(KnnConfig(k=5))
    )
    combined = CombinedClassifier(hooks, target_precision=0.85, seed=0)
    combined.train(train, 5)
    attainable = not combined.threshold.warning
    base_accuracy = np.mean([p == t for p, t in zip(base.predict(test.x), test.y)])
    cm, rates = combined.score(test)
    ok = attainable and rates["precision"] is not None and rates["precision"] >= 0.80 \
        and rates["rejection"] < 1.0
    report(10, "held-out precision >= 0.80 at attainable target 0.85, rejection < 1",
           ok,
           f"base accuracy={base_accuracy:.3f}, precision={rates['precision']:.3f}, "
           f"rejection={rates['rejection']:.3f}, T={combined.threshold.t:.3f}")


# ---------------------------------------------------------------------------
# inductive/transductive consistency
# ---------------------------------------------------------------------------


def _linear_output_measure(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((2, 3))

    def predict(x):
        z = np.exp(np.clip(np.asarray(x, dtype=float) @ w, -30, 30))
        return z / z.sum(axis=1, keepdims=True)

    return ModelOutputMeasure(ModelOutputAdapterConfig(predict_fn=predict, scorer="diff"))


def test_criterion_11_icp_matches_cp_with_self_count():
    mismatches = 0
    for trial in range(100):
        rng = np.random.default_rng(11000 + trial)
        n = int(rng.integers(6, 40))
        bag = Bag.classification(
            rng.standard_normal((n, 2)),
            [("A", "B", "C")[i] for i in rng.integers(0, 3, size=n)],
            ("A", "B", "C"),
        )
        x_test = rng.standard_normal((3, 2))
        smoothed = bool(rng.integers(0, 2))
        cp = ConformalClassifier(
            _linear_output_measure(trial), CpConfig(epsilons=(0.1,), smoothed=smoothed)
        ).train(bag)
        icp = InductiveConformalClassifier(
            _linear_output_measure(trial),
            IcpConfig(epsilons=(0.1,), smoothed=smoothed, include_test_in_count=True),
        )
        icp.train(bag).calibrate(bag)
        a = cp.p_values(x_test, SeededRng(trial) if smoothed else None).values
        b = icp.p_values(x_test, SeededRng(trial) if smoothed else None).values
        mismatches += not np.array_equal(a, b)
    report(11, "ICP with self-count equals offline CP bit-exactly on 100 instances",
           mismatches == 0, f"mismatching instances={mismatches}")


# ---------------------------------------------------------------------------
# CLI determinism
# ---------------------------------------------------------------------------


def test_criterion_12_cli_determinism(tmp_path):
    train = tmp_path / "train.csv"
    test = tmp_path / "test.csv"
    # overlapping classes keep both meta classes populated for `meta`
    save_csv(gaussian_blobs(50, seed=1, centers=((0, 0), (1, 1))), train)
    save_csv(gaussian_blobs(20, seed=2, centers=((0, 0), (1, 1))), test)
    reg_train = tmp_path / "rtrain.csv"
    reg_test = tmp_path / "rtest.csv"
    save_csv(linear_regression_bag(40, seed=3), reg_train, label_column="y")
    save_csv(linear_regression_bag(12, seed=4), reg_test, label_column="y")

    invocations = [
        ["cp", "--train", str(train), "--test", str(test), "--epsilons", "0.05,0.1",
         "--ncm", "knn:k=1", "--smoothed", "--seed", "7"],
        ["icp", "--train", str(train), "--test", str(test),
         "--calibration-fraction", "0.6", "--seed", "7"],
        ["rrcm", "--train", str(reg_train), "--test", str(reg_test),
         "--label-column", "y", "--online", "--seed", "7"],
        ["venn", "--train", str(train), "--test", str(test), "--seed", "7"],
        ["meta", "--train", str(train), "--test", str(test), "--k-folds", "4", "--seed", "7"],
    ]
    identical = True
    for i, argv in enumerate(invocations):
        out_a = tmp_path / f"a{i}.json"
        out_b = tmp_path / f"b{i}.json"
        assert cli_main(argv + ["--output", str(out_a)]) == 0
        assert cli_main(argv + ["--output", str(out_b)]) == 0
        identical = identical and out_a.read_bytes() == out_b.read_bytes()
        json.loads(out_a.read_text())  # well-formed report
    report(12, "every documented CLI invocation is byte-identical across reruns",
           identical, f"{len(invocations)} commands checked")
