import numpy as np

from efe_nav.verify import SUITES, format_table, random_beliefs, run_suites


def test_random_beliefs_off_station_and_valid():
    bs = random_beliefs(50, seed=1)
    assert len(bs) == 50
    for b in bs:
        assert np.hypot(b.mean[0], b.mean[1]) > 0.15
        assert np.linalg.eigvalsh(b.cov).min() > 0
        assert np.trace(b.cov) <= 4.0 + 1e-12


def test_suite_selection():
    assert {r.transform for r in run_suites(("unscented",), n=10)} == {"unscented"}
    assert [r.name for r in run_suites(("split",), n=10)] == ["entropy split"] * 3
    assert len(run_suites(SUITES, n=10)) == 6


def test_exact_identities_hold():
    by = {(r.name, r.transform): r for r in run_suites(n=50, seed=3)}
    assert by[("constant ambiguity", "taylor1")].passed
    assert by[("closed form = generic", "taylor2")].passed
    for t in ("taylor1", "taylor2", "unscented"):
        assert by[("entropy split", t)].passed


def test_unscented_ambiguity_is_state_dependent():
    (r,) = run_suites(("unscented",), n=50)
    assert not r.passed and r.max_deviation > 1.0


def test_corrupted_noise_breaks_identities():
    res = run_suites(("taylor1", "taylor2"), n=10, corrupt_r=2.0)
    assert all(not r.passed for r in res)
    # doubling both noise variances shifts the constant by ln 2
    assert abs(res[0].max_deviation - np.log(2.0)) < 1e-6


def test_format_table_lists_every_check():
    res = run_suites(n=5)
    text = format_table(res)
    assert len(text.splitlines()) == len(res) + 1
    assert "FAIL" in text and "PASS" in text
