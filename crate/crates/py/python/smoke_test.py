"""Smoke test for the evprice extension module.

Uses an installed `evprice` when importable. Otherwise builds the
extension with cargo and loads it from the target directory.
"""

import importlib
import os
import shutil
import subprocess
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.abspath(os.path.join(HERE, "..", "..", ".."))


def load():
    try:
        return importlib.import_module("evprice")
    except ImportError:
        pass
    subprocess.run(["cargo", "build", "-q", "-p", "evprice-py"], cwd=ROOT, check=True)
    lib = os.path.join(ROOT, "target", "debug", "libevprice.so")
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "evprice.so"))
    sys.path.insert(0, tmp)
    return importlib.import_module("evprice")


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    ev = load()
    toy = ev.illustrative()
    assert toy.owned == [0]

    ue = toy.solve_ue()
    assert close(ue["path_flows"], [0.75, 0.75, 1.0, 1.0], 1e-6), ue["path_flows"]
    assert close(ue["charge_flows"], [1.75, 1.75], 1e-6)

    grad = toy.sensitivity()["grad"]
    assert close([grad[0][0], grad[1][0]], [-0.2, 0.2], 1e-8), grad

    traj = toy.optimize(lam0=[4.0])
    profits = [it["profit"] for it in traj["iterates"]]
    assert all(b > a for a, b in zip(profits, profits[1:])), profits

    nd = ev.nguyen_dupuis()
    report = nd.fd_check([210.0, 215.0])
    assert report["pass"], report

    run = ev.coupled_run(nd, ev.four_bus(), load_scale=ev.ND_LOAD_SCALE)
    assert abs(run["cycles"][-1]["delta"]) <= 1e-3

    opf = ev.four_bus().solve_opf([0.0, 10.0, 10.0, 10.0])
    assert len(opf["lmp"]) == 4

    try:
        ev.load_scenario("/no/such.net", "/no/such.trips", "/no/such.fcs")
    except ValueError as e:
        assert "/no/such.net" in str(e)
    else:
        raise AssertionError("missing file accepted")

    print(f"evprice {ev.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
