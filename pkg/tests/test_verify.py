from hvae.cli import run
from hvae.verify import CheckResult, check_bounds, check_sum_vs_mean, run_checks


def test_check_line_format():
    assert CheckResult("x", True, "ok").line().startswith("PASS  x")
    assert CheckResult("x", False, "bad").line().startswith("FAIL  x")


def test_individual_checks():
    assert check_sum_vs_mean().passed
    assert check_bounds(3, partial=False).passed


def test_run_checks_reports_each(capsys):
    results = run_checks(draws=2)
    lines = capsys.readouterr().out.splitlines()
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
    assert len(lines) == len(results) + 1
    assert lines[-1] == f"{len(results)}/{len(results)} checks passed"


def test_crashing_check_counts_as_failure(monkeypatch):
    import hvae.verify as v

    def boom():
        raise RuntimeError("nope")

    monkeypatch.setattr(v, "check_closed_forms", boom)
    results = v.run_checks(draws=1, report=None)
    assert not results[0].passed and "RuntimeError" in results[0].detail


def test_cli_verify_exit_codes(monkeypatch, capsys):
    assert run(["verify", "--draws", "1"]) == 0
    import hvae.verify as v

    monkeypatch.setattr(v, "check_sum_vs_mean", lambda: CheckResult("forced", False, "failing on purpose"))
    assert run(["verify", "--draws", "1"]) == 1
