"""Self-check battery: fast individual checks, the crash-to-FAIL runner
path, fault-injection hygiene, and report serialization."""

import json

import pytest

from sincscan import ssm, verify
from sincscan.errors import ConfigError


FAST_CHECKS = [
    verify.check_zoh_closed_form,
    verify.check_zoh_series_limit,
    verify.check_phi1_guard_is_load_bearing,
    verify.check_scan_matches_lti_kernel,
    verify.check_bidirectional_symmetry,
    verify.check_causality,
    verify.check_filterbank_response,
    verify.check_eer_against_exhaustive_sweep,
    verify.check_min_tdcf_against_brute_force,
    verify.check_eer_monotone_invariance,
]


@pytest.mark.parametrize("check", FAST_CHECKS, ids=lambda c: c.__name__)
def test_fast_checks_pass_individually(check):
    observed, tolerance, passed = check()
    assert passed, f"{observed} (required {tolerance})"


def test_fault_injection_restores_the_original_phi1():
    before = ssm.phi1
    verify.check_phi1_guard_is_load_bearing()
    assert ssm.phi1 is before


def test_unknown_level_is_rejected():
    with pytest.raises(ConfigError):
        verify.run_checks("paranoid")


def test_runner_turns_a_crash_into_a_failed_check(monkeypatch):
    def exploding():
        raise RuntimeError("boom")

    monkeypatch.setattr(verify, "QUICK_CHECKS",
                        (("ok", verify.check_zoh_closed_form),
                         ("explodes", exploding)))
    results = verify.run_checks("quick")
    assert [r.passed for r in results] == [True, False]
    assert "RuntimeError" in results[1].observed
    assert "boom" in results[1].observed


def test_report_round_trip(monkeypatch, tmp_path):
    monkeypatch.setattr(verify, "QUICK_CHECKS",
                        (("zoh", verify.check_zoh_closed_form),))
    results = verify.run_checks("quick")
    path = tmp_path / "report.json"
    verify.write_report(path, "quick", results)
    loaded = json.loads(path.read_text())
    assert loaded["level"] == "quick"
    assert loaded["passed"] is True
    assert loaded["checks"][0]["name"] == "zoh"
    assert loaded["checks"][0]["passed"] is True
    assert "tolerance" in loaded["checks"][0]
    assert "observed" in loaded["checks"][0]

    text = verify.format_report("quick", results)
    assert "[PASS] zoh" in text
    assert "1/1 checks passed" in text


def test_format_report_marks_failures(monkeypatch):
    monkeypatch.setattr(verify, "QUICK_CHECKS",
                        (("bad", lambda: ("off by 1", "< 0", False)),))
    results = verify.run_checks("quick")
    text = verify.format_report("quick", results)
    assert "[FAIL] bad" in text
    assert "0/1 checks passed" in text
