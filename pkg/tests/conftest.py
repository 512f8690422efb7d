def pytest_runtest_logreport(report):
    # one visible verdict line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            report.outcome, report.outcome.upper())
        print(f"\nACCEPTANCE {verdict}: {name}", flush=True)
