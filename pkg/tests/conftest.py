import warnings

import pytest

from stimclean.suite import SuiteConfig, generate, run_methods


@pytest.fixture(scope="session")
def small_suite():
    """Three 20 s recordings: enough for every pipeline stage, quick to build."""
    cfg = SuiteConfig(n_recordings=3, duration_s=20.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = generate(cfg)
    return cfg, data


@pytest.fixture(scope="session")
def small_runs(small_suite):
    cfg, data = small_suite
    return [run_methods(semi, data.library, cfg, res.recording.id)
            for semi, res in zip(data.semireal, data.adbs)]


#: criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: not run")
