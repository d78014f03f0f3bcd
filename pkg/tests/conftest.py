import numpy as np
import pytest

from lic_hw_kit import GdnParams, LayerSpec, ModelSpec, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_conv(cin, cout, k=3, s=1, p=1, rng=None, kind="conv"):
    r = rng if rng is not None else np.random.default_rng(0)
    return LayerSpec(
        kind=kind, in_channels=cin, out_channels=cout, kernel=k, stride=s,
        padding=p,
        weights=r.normal(0.0, 0.1, (cout, cin, k, k)).astype(np.float32),
        bias=r.normal(0.0, 0.01, cout).astype(np.float32),
    )


def make_gdn(c, kind="gdn", rng=None):
    r = rng if rng is not None else np.random.default_rng(1)
    return LayerSpec(
        kind=kind, in_channels=c, out_channels=c,
        gdn_params=GdnParams(
            beta=r.uniform(1.0, 2.0, c),
            gamma=r.uniform(0.0, 1.0, (c, c)) * (0.05 / c),
        ),
    )


def make_encoder(rng, cin=3, mid=6, out=4, role="main_encoder"):
    return ModelSpec(
        name="enc",
        role=role,
        layers=[
            make_conv(cin, mid, s=2, rng=rng),
            make_gdn(mid, rng=rng),
            make_conv(mid, mid, rng=rng),
            make_gdn(mid, rng=rng),
            make_conv(mid, out, s=2, rng=rng),
        ],
    )


def rand_tensor(rng, dims, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, dims).astype(np.float32))


# ---------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion after the run
# ---------------------------------------------------------------------------

_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _acceptance[name] = False
    elif report.when == "call" and report.passed:
        _acceptance.setdefault(name, True)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: int(n.split("_")[2])):
        verdict = "PASS" if _acceptance[name] else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
