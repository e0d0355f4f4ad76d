import itertools

import numpy as np
import pytest

from emofusion.data_io import ModelBundle, SampleRecord


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        up = f()
        x[i] = orig - h
        down = f()
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric):
    """Largest absolute deviation relative to the gradient's scale."""
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def enumerate_posterior(present, table, prior, cnn_evidence=None, cnn_cpt=None, presence_only=False):
    """P(y | evidence) by summing the explicit joint over every network state."""
    d = len(present)
    present = tuple(bool(v) for v in present)
    cnn_states = range(3) if cnn_cpt is not None else (None,)
    num = np.zeros(3)
    for y in range(3):
        for xs in itertools.product((False, True), repeat=d):
            for c in cnn_states:
                p = prior[y]
                for i, x in enumerate(xs):
                    p *= table[i, y] if x else 1.0 - table[i, y]
                if c is not None:
                    p *= cnn_cpt[y, c]
                if presence_only:
                    match = all(xs[i] for i in range(d) if present[i])
                else:
                    match = xs == present
                if match and (cnn_evidence is None or c == cnn_evidence):
                    num[y] += p
    return num / num.sum()


def make_record(image_id, label, descriptors=(), boxes=()):
    return SampleRecord(image_id, f"{image_id}.ppm", tuple(boxes), frozenset(descriptors), label)


def random_bundle(rng, with_cnn=True, with_bn=True):
    bundle = ModelBundle()
    if with_cnn:
        bundle.cnn_params = {
            "conv1.w": rng.normal(size=(3, 3, 3, int(rng.integers(1, 5)))),
            "conv1.b": rng.normal(size=4)[: int(rng.integers(1, 5))],
            "dense1.w": rng.normal(size=(int(rng.integers(1, 20)), 3)) * 10.0 ** rng.integers(-300, 300),
            "dense1.b": np.array([np.nextafter(0, 1), -0.0, 1 / 3]),
        }
        bundle.layers = [{"kind": "conv", "kernel_size": 3, "out_channels": 4, "units": 0, "keep_prob": 1.0}]
        bundle.input_shape = (8, 8, 3)
        bundle.optimizer = {"learning_rate": float(rng.random()), "seed": int(rng.integers(1000))}
    if with_bn:
        d = int(rng.integers(0, 12))
        bundle.vocabulary = [f"word{i}-é" for i in range(d)]
        bundle.cpt = rng.random((d, 3))
        bundle.prior = rng.dirichlet(np.ones(3))
        bundle.cnn_cpt = rng.dirichlet(np.ones(3), size=3) if rng.random() < 0.5 else None
        bundle.smoothing = float(rng.random())
        bundle.presence_only = bool(rng.random() < 0.5)
    return bundle


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by the report hook
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    _criteria[number] = (title, status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, seconds = _criteria[number]
        terminalreporter.write_line(f"{status}  {number:>2}. {title}  [{seconds:.1f} s]")
