"""Smoke test for the berk_nash_py extension.

Run after `maturin develop -m crates/python/Cargo.toml`, or after
`cargo build -p berk-nash-py --features extension-module --release`, in which
case the freshly built library under target/release is loaded directly.
"""

import importlib.util
import json
import math
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import berk_nash_py

        return berk_nash_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libberk_nash_py.so"
        if lib.exists():
            dst = pathlib.Path(tempfile.mkdtemp()) / "berk_nash_py.so"
            shutil.copy(lib, dst)
            spec = importlib.util.spec_from_file_location("berk_nash_py", dst)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("berk_nash_py not found; build it first")


def main():
    bn = load()

    correct = bn.unhappy_instance(0.86, 0.6, 1e-4, correct=True)
    mis = bn.unhappy_instance(0.86, 0.6, 1e-4)
    rc = json.loads(bn.solve(correct))["revenue"]
    rm = json.loads(bn.solve(mis))["revenue"]
    c_bound, m_bound, ratio = bn.unhappy_bounds(0.86, 0.6, 1e-4)
    assert abs(rc - c_bound) < 1e-9 and abs(rm - m_bound) < 1e-9
    assert 1.80 <= rc / rm <= 1.82, rc / rm

    inst, contract = bn.divergence_instance()
    kl = bn.kl_matrix(inst)
    assert kl[0][0] == 0.0 and abs(kl[1][0] - math.log(8)) < 1e-15
    actions, outcomes, switches = bn.simulate(inst, contract, 6, 0)
    assert actions == [0, 2, 2, 2, 1, 1], actions
    assert switches == [2, 5], switches

    rep = json.loads(bn.solve(mis))
    valid, opt, cons = bn.verify(mis, rep["contract"], rep["alpha"], rep["mu"], 1e-6)
    assert valid, (opt, cons)

    try:
        bn.validate("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("invalid instance accepted")

    with tempfile.TemporaryDirectory() as d:
        code, artifacts, summary = bn.execute(["scenario", "divergence", "--out", d])
        assert code == 0 and all(os.path.exists(p) for p in artifacts), summary
        assert bn.execute(["nope"])[0] == 2

    print(f"python smoke test ok: revenue ratio {rc / rm:.12f}")


if __name__ == "__main__":
    main()
