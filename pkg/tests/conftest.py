import copy
from datetime import datetime, timezone

import pytest

from leonet.config import scenario_from_dict

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)

SMALL_DOC = {
    "schema_version": 1,
    "constellation": {"name": "small", "isl_pattern": "grid", "isl_max_range_km": 5000.0},
    "satellites": {"walker": {"orbits": 12, "sats_per_orbit": 10, "altitude_km": 550.0,
                              "inclination_deg": 53.0, "phasing": 1}},
    "ground_segments": [
        {"id": "LON", "role": "terminal", "lat": 51.5, "lon": -0.1},
        {"id": "NYC", "role": "gateway", "lat": 40.7, "lon": -74.0},
    ],
    "rf": {},
    "simulation": {"start": "2024-01-01T00:00:00Z", "duration_s": 10, "interval_ms": 1000},
    "applications": {"flows": [{"id": "f1", "src": "LON", "dst": "NYC"}]},
}


def make_config(**overrides):
    """SMALL_DOC with section-level overrides merged in (dicts merged, lists replaced)."""
    doc = copy.deepcopy(SMALL_DOC)
    for section, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(section), dict):
            doc[section].update(value)
        else:
            doc[section] = value
    return scenario_from_dict(doc)


@pytest.fixture
def small_config():
    return make_config()


@pytest.fixture(scope="session")
def small_bundle():
    from leonet.backstage import precompute

    return precompute(make_config(), eps_latency_ms=0.0, eps_capacity_mbps=0.0)


# --- acceptance reporting ----------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.notes = number, title, []

    def note(self, text: str):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc_type is not None:
            detail = f"{detail}; {exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}".strip("; ")
        line = f"[criterion {self.number:2d}] {status}  {self.title}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
