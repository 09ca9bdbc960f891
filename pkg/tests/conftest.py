import struct

import numpy as np
import pytest

from bgmgen.denoiser import Architecture, DenoiserNet


def varlen(value):
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def smf(tracks, fmt=None, division=480):
    """Assemble SMF bytes from tracks given as lists of (delta, message-bytes)."""
    if fmt is None:
        fmt = 0 if len(tracks) == 1 else 1
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), division)
    for events in tracks:
        body = b"".join(varlen(d) + msg for d, msg in events) + b"\x00\xFF\x2F\x00"
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return out


TOY_ARCH = Architecture(time_steps=16, pitch_bins=16, d_model=8, d_cond=4, d_key=4,
                        d_value=4, d_time=8, d_fv=6, d_fl=5, k=8, t0=200)


@pytest.fixture
def toy_arch():
    return TOY_ARCH


@pytest.fixture
def random_toy_net():
    """Toy net with every parameter random, so every layer carries gradient."""
    net = DenoiserNet(TOY_ARCH, seed=3)
    rng = np.random.default_rng(11)
    net.params[:] = rng.standard_normal(net.param_count) * 0.3
    return net


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    report = outcome.get_result()
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
