import sys

import pytest

from migsim.catalog import GiB, bundled_catalog, catalog_from_dict
from migsim.fsm import build_table


@pytest.fixture(scope="session")
def a100():
    return bundled_catalog("a100-40gb")


@pytest.fixture(scope="session")
def a100_table(a100):
    return build_table(a100)


def make_catalog(profiles, compute=7, slots=8, per_slot=5 * GiB, context=0, sms=None, name="test"):
    raw = {
        "gpu_name": name,
        "total_compute_slices": compute,
        "total_memory_slots": slots,
        "bytes_per_memory_slot": per_slot,
        "reserved_context_bytes": context,
        "profiles": profiles,
    }
    if sms is not None:
        raw["total_sms"] = sms
    return catalog_from_dict(raw)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
