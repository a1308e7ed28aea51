import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradw.metrics import (REPORT_HEADER, EvalRow, Trial, compute_eer, compute_min_dcf, cosine_score, make_trials,
                           read_report, read_trials, write_report, write_trials)


def sweep_oracle(scores, labels):
    """(frr, far) at -inf, every midpoint between distinct scores, and +inf."""
    s = sorted(set(float(x) for x in scores))
    thresholds = [-np.inf] + [(a + b) / 2 for a, b in zip(s, s[1:])] + [np.inf]
    tgt = [x for x, l in zip(scores, labels) if l]
    non = [x for x, l in zip(scores, labels) if not l]
    pts = []
    for th in thresholds:
        frr = sum(1 for x in tgt if x < th) / len(tgt)
        far = sum(1 for x in non if x >= th) / len(non)
        pts.append((frr, far))
    return pts


def oracle_eer(scores, labels):
    pts = sweep_oracle(scores, labels)
    for k, (frr, far) in enumerate(pts):
        if frr >= far:
            if k == 0 or frr == far:
                return (frr + far) / 2
            f0, a0 = pts[k - 1]
            # intersect the two segments frr(lam) and far(lam)
            lam = (a0 - f0) / ((a0 - f0) + (frr - far))
            return f0 + lam * (frr - f0)
    raise AssertionError("sweep never crossed")


def oracle_dcf(scores, labels, p=0.01, cm=1.0, cf=1.0):
    best = min(cm * p * frr + cf * (1 - p) * far for frr, far in sweep_oracle(scores, labels))
    return best / min(cm * p, cf * (1 - p))


def random_sets(n_sets=1000, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_sets):
        n = int(rng.integers(2, 201))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        labels[0], labels[1] = True, False
        sep = rng.uniform(0, 3)
        scores = rng.standard_normal(n) + sep * labels
        if rng.random() < 0.3:
            scores = np.round(scores, 1)  # exercise ties
        yield scores, labels


class TestCosine:
    def test_cases(self):
        v = np.array([1.0, 2.0, 3.0])
        assert cosine_score(v, v) == pytest.approx(1)
        assert cosine_score([1, 0], [0, 1]) == 0
        assert cosine_score(v, -v) == pytest.approx(-1)

    def test_errors(self):
        with pytest.raises(ValueError):
            cosine_score([0, 0], [1, 0])
        with pytest.raises(ValueError):
            cosine_score([1, 0], [1, 0, 0])


class TestEer:
    def test_perfect(self):
        assert compute_eer([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])[0] == 0

    def test_inverted(self):
        assert compute_eer([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0])[0] == 1.0

    def test_interleaved(self):
        eer, thr = compute_eer([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0])
        assert eer == 0.5
        assert 0.4 <= thr <= 0.6

    def test_single_class(self):
        with pytest.raises(ValueError):
            compute_eer([0.1, 0.2], [1, 1])

    def test_matches_oracle(self):
        worst = max(abs(compute_eer(s, l)[0] - oracle_eer(s, l)) for s, l in random_sets())
        assert worst < 1e-9

    @settings(max_examples=100, deadline=None)
    # dyadic grid keeps the transforms strictly increasing in floating point
    @given(st.lists(st.tuples(st.integers(-640, 640), st.booleans()), min_size=2, max_size=60))
    def test_bounds_and_monotone_invariance(self, pairs):
        scores = np.array([p[0] for p in pairs]) / 64.0
        labels = np.array([p[1] for p in pairs])
        if labels.all() or not labels.any():
            return
        e = compute_eer(scores, labels)[0]
        assert 0 <= e <= 1
        assert compute_eer(2 * scores + 7, labels)[0] == pytest.approx(e, abs=1e-12)
        assert compute_eer(scores ** 3, labels)[0] == pytest.approx(e, abs=1e-12)


class TestMinDcf:
    def test_perfect(self):
        assert compute_min_dcf([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 0

    def test_inverted_ceiling(self):
        assert compute_min_dcf([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == pytest.approx(1.0)

    def test_positive_scaling(self):
        s, l = next(random_sets(1, 5))
        assert compute_min_dcf(3.5 * s, l) == pytest.approx(compute_min_dcf(s, l), abs=1e-12)

    def test_matches_oracle(self):
        worst = 0.0
        for i, (s, l) in enumerate(random_sets(seed=1)):
            p = (0.01, 0.05, 0.5)[i % 3]
            worst = max(worst, abs(compute_min_dcf(s, l, p) - oracle_dcf(s, l, p)))
        assert worst < 1e-9

    def test_monotone_invariance(self):
        for s, l in random_sets(50, 2):
            assert compute_min_dcf(np.exp(s), l) == pytest.approx(compute_min_dcf(s, l), abs=1e-12)

    def test_bounds_and_errors(self):
        for s, l in random_sets(50, 3):
            assert 0 <= compute_min_dcf(s, l) <= 1
        with pytest.raises(ValueError):
            compute_min_dcf([0.1, 0.2], [0, 1], p_target=1.0)
        with pytest.raises(ValueError):
            compute_min_dcf([0.1, 0.2], [0, 1], c_fa=0)


class TestTrialsAndReports:
    def test_trial_round_trip(self, tmp_path):
        trials = [Trial(True, "a", "b"), Trial(False, "a", "c")]
        write_trials(tmp_path / "t.txt", trials)
        assert (tmp_path / "t.txt").read_text() == "1 a b\n0 a c\n"
        assert read_trials(tmp_path / "t.txt") == trials

    def test_bad_label(self, tmp_path):
        (tmp_path / "t.txt").write_text("2 a b\n")
        with pytest.raises(ValueError):
            read_trials(tmp_path / "t.txt")

    def test_make_trials_balanced_and_valid(self):
        spk = {f"s{s}_u{u}": s for s in range(4) for u in range(5)}
        trials = make_trials(spk, 60, seed=3)
        assert sum(t.label for t in trials) == 30
        for t in trials:
            assert t.enroll != t.test
            assert (spk[t.enroll] == spk[t.test]) == t.label
        assert len({(t.enroll, t.test) for t in trials}) == 60
        assert make_trials(spk, 60, seed=3) == trials

    def test_report_round_trip(self, tmp_path):
        rows = [EvalRow("-5", "grad_w", 0.125, 0.5, 200, 1), EvalRow("clean", "noisy", 0.0, 0.0, 200, 1)]
        write_report(tmp_path / "r.csv", rows)
        text = (tmp_path / "r.csv").read_text()
        assert text.splitlines()[0] == REPORT_HEADER
        assert read_report(tmp_path / "r.csv") == rows
