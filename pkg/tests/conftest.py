import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "rigid-motion invariance of C",
    2: "analytic Jacobian vs finite differences",
    3: "every accepted step within 0.1% relative residual",
    4: "locking: pairwise corner distance <= 6 cm, fold >= 0.5 m",
    5: "Cusick drape presets, ordering and sweep stability",
    6: "garment area conservation",
    7: "contact soundness on sphere and plane",
    8: "calibration round trip",
    9: "mesh-resolution stability of dynamics",
    10: "bit-identical reruns",
}

_results = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m or "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        k = int(m.group(1))
        ok = report.outcome == "passed"
        prev = _results.get(k)
        detail = "; ".join(f"{n}={v}" for n, v in report.user_properties)
        if prev is None or (prev[0] and not ok):
            _results[k] = (ok, detail)
        elif detail:
            _results[k] = (prev[0], "; ".join(x for x in (prev[1], detail) if x))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(CRITERIA):
        if k not in _results:
            continue
        ok, detail = _results[k]
        line = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}: {CRITERIA[k]}"
        tr.write_line(line + (f"  [{detail}]" if detail else ""))
