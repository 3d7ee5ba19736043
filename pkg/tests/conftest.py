import json

import pytest

from opskit.netcase import load_case, parse_native

# 2-bus workhorse: lossless 0.1 p.u. reactance line, 50 MW load at bus 2,
# big generator at bus 1 plus a condenser at bus 2 that can hold its voltage
TWO_BUS = """\
function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1  3  0   0  0  0  1  1.0  0.0  135  1  1.1  0.9;
    2  1  50  0  0  0  1  1.0  0.0  135  1  1.1  0.9;
];
mpc.gen = [
    1  0  0  300  -300  1.0  100  1  200  0;
    2  0  0  300  -300  1.0  100  1  0    0;
];
mpc.branch = [
    1  2  0  0.1  0  0  0  0  0  0  1  -30  30;
];
"""


def native_doc(*, buses, lines=(), generators=(), loads=(), shunts=(),
               base_mva=100.0):
    return json.dumps({
        "base_mva": base_mva,
        "buses": list(buses),
        "lines": list(lines),
        "generators": list(generators),
        "loads": list(loads),
        "shunts": list(shunts),
    })


def bus(i, vmin=0.9, vmax=1.1):
    return {"id": i, "vmin": vmin, "vmax": vmax}


def line(i, f, t, *, b=-10.0, g=0.0, b_fr=0.0, b_to=0.0, thermal=10.0,
         ang=0.5236):
    return {"id": i, "from_bus": f, "to_bus": t, "g_series": g, "b_series": b,
            "g_fr": 0.0, "b_fr": b_fr, "g_to": 0.0, "b_to": b_to,
            "tap_re": 1.0, "tap_im": 0.0, "thermal": thermal,
            "ang_min": -ang, "ang_max": ang}


def gen(i, b, pmax=5.0, pmin=0.0, qmax=5.0, qmin=-5.0):
    return {"id": i, "bus": b, "pmin": pmin, "pmax": pmax,
            "qmin": qmin, "qmax": qmax}


def load(i, b, pd, qd=0.0, weight=1.0):
    return {"id": i, "bus": b, "pd": pd, "qd": qd, "weight": weight}


@pytest.fixture(scope="session")
def case3():
    return load_case("case3_lmbd")


@pytest.fixture(scope="session")
def case5():
    return load_case("case5_pjm")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14_ieee")


@pytest.fixture(scope="session")
def two_bus():
    from opskit.netcase import parse_matpower
    return parse_matpower(TWO_BUS, name="case2")


@pytest.fixture()
def single_bus_net():
    doc = native_doc(buses=[bus(1)], generators=[gen(1, 1, pmax=2.0)],
                     loads=[load(1, 1, 1.0)])
    return parse_native(doc, name="onebus")
