"""Verification harness: report format, suite registry, case coverage."""

import numpy as np
import pytest

from vidprior.evaluate.verify import (
    SUITES,
    Check,
    _check,
    primitive_cases,
    product_oracle,
    run_suites,
    suite_schedule,
)
from vidprior.schedule import linear_schedule


def test_suite_names():
    assert set(SUITES) == {"gradients", "moments", "zeroinit", "shifted-init", "gaussian-ode", "schedule"}


def test_check_line_format():
    c = _check("demo", "thing", 0.5, 1.0)
    assert c.passed and c.line() == "PASS demo.thing: measured=0.5 <= 1"
    f = _check("demo", "thing", 2.0, 1.0)
    assert not f.passed and f.line().startswith("FAIL demo.thing")
    assert not _check("demo", "strict", 1.0, 1.0, "<").passed
    assert Check("s", "n", 0.0, 0.0, True, "==").line() == "PASS s.n: measured=0 == 0"


def test_run_suites_emits_report_lines():
    lines = []
    ok, checks = run_suites("schedule", emit=lines.append)
    assert ok and all(c.passed for c in checks)
    assert len(lines) == len(checks) + 2
    assert lines[-2].startswith("suite schedule:")
    assert lines[-1] == "RESULT PASS"


def test_run_suites_reports_failure(monkeypatch):
    monkeypatch.setitem(SUITES, "schedule", lambda: [_check("schedule", "forced", 1.0, 0.0)])
    lines = []
    ok, _ = run_suites("schedule", emit=lines.append)
    assert not ok and lines[-1] == "RESULT FAIL"


def test_unknown_suite():
    with pytest.raises(ValueError, match="unknown suite"):
        run_suites("nonsense", emit=lambda s: None)


def test_product_oracle_is_independent_of_schedule_code():
    oracle = product_oracle(T=5, beta_start=0.1, beta_end=0.5)
    want = np.cumprod(1 - np.array([0.1, 0.2, 0.3, 0.4, 0.5]))
    np.testing.assert_allclose([float(v) for v in oracle], want, rtol=1e-15)
    s = linear_schedule(5, 0.1, 0.5)
    np.testing.assert_allclose(s.alpha_bars, want, rtol=1e-14)


def test_schedule_suite_passes():
    assert all(c.passed for c in suite_schedule())


def test_primitive_cases_cover_every_op_ten_times():
    cases = primitive_cases(np.random.default_rng(0))
    assert len(cases) >= 20
    for op, items in cases.items():
        assert len(items) >= 10, op
        shapes = {tuple(x.shape for x in inputs) for _, inputs in items}
        assert len(shapes) > 1, op
