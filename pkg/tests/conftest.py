import numpy as np
import pytest

from fimcb.dataset import ParticleRecord, record_path

# (antibody, stress) -> (train, val) image counts of the reference corpus
CORPUS_COUNTS = {
    ("mAb1", "heat"): (1055, 188), ("mAb2", "heat"): (2298, 409), ("mAb3", "heat"): (1715, 285),
    ("mAb4", "heat"): (1332, 227), ("mAb5", "heat"): (0, 447),
    ("mAb1", "mechanical"): (2146, 434), ("mAb2", "mechanical"): (1071, 200),
    ("mAb6", "mechanical"): (1580, 311), ("mAb7", "mechanical"): (1603, 288),
    ("mAb8", "mechanical"): (0, 367),
}


def make_records(groups: dict, dims=(64, 64)):
    """Unassigned records, ``groups`` maps (antibody, stress) to a count."""
    out = []
    for (ab, stress), n in groups.items():
        for i in range(n):
            rec_id = f"{ab}-{stress[0]}-{i:05d}"
            out.append(ParticleRecord(rec_id, ab, stress, 1 + i % 3, record_path(ab, stress, rec_id), *dims))
    return out


@pytest.fixture(scope="session")
def corpus_records():
    return make_records({k: tr + va for k, (tr, va) in CORPUS_COUNTS.items()})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance result; call before asserting so failures are logged too."""
    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(number, []).append((ok, detail))
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            cases = _ACCEPTANCE[number]
            verdict = "PASS" if all(ok for ok, _ in cases) else "FAIL"
            terminalreporter.write_line(f"criterion {number:2d}: {verdict}  " + "; ".join(d for _, d in cases))
