#!/usr/bin/env python3
"""Smoke test for the ilap_py extension module.

Builds nothing itself: it expects `cargo build -p ilap-py --release`
(or a debug build) to have produced the shared library, copies it next
to a temporary directory under the importable name, and exercises the
bindings end to end.
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def locate_library() -> pathlib.Path:
    candidates = [
        ROOT / "target" / "release" / "libilap_py.so",
        ROOT / "target" / "debug" / "libilap_py.so",
        ROOT / "target" / "release" / "libilap_py.dylib",
        ROOT / "target" / "debug" / "libilap_py.dylib",
    ]
    for path in candidates:
        if path.exists():
            return path
    sys.exit("build the extension first: cargo build -p ilap-py --release")


def check(label: str, ok: bool, detail: str = "") -> None:
    if not ok:
        sys.exit(f"FAIL {label} {detail}".rstrip())
    print(f"ok {label}")


def main() -> None:
    lib = locate_library()
    workdir = tempfile.mkdtemp(prefix="ilap-py-")
    shutil.copy(lib, pathlib.Path(workdir) / "ilap_py.so")
    sys.path.insert(0, workdir)
    import ilap_py

    # Exact solve of a 2x2 market with known optimum and minimal prices.
    out = ilap_py.solve([[0.9, 0.3], [0.8, 0.1]], [1, 1], [1, 2])
    check("solve welfare", abs(out["welfare"] - 1.1) < 1e-9, f"got {out['welfare']}")
    check("solve pairs", out["pairs"] == [(0, 1), (1, 0)], f"got {out['pairs']}")
    check(
        "solve prices",
        abs(out["prices"][0] - 0.6) < 1e-9 and abs(out["prices"][1]) < 1e-9,
        f"got {out['prices']}",
    )
    check("solve gap", abs(out["duality_gap"]) <= 1e-8, f"got {out['duality_gap']}")

    # The solved outcome is stable; pushing the price up breaks minimality
    # but not stability, pushing it down breaks stability.
    _, total = ilap_py.stability(
        [[0.9, 0.3], [0.8, 0.1]], out["pairs"], out["prices"], [1, 1], [1, 2]
    )
    check("stability at optimum", total <= 1e-8, f"got {total}")
    _, lowered = ilap_py.stability(
        [[0.9, 0.3], [0.8, 0.1]], out["pairs"], [0.5, 0.0], [1, 1], [1, 2]
    )
    check("instability below minimal prices", lowered > 1e-6, f"got {lowered}")

    # Radius and discount formulas against their pinned values.
    rho = ilap_py.rho_star(1, 0.05, 0.01, 1.0, 10, 5, 2, 0.2, 1.0)
    check("rho_star", abs(rho - 11.471972113245712) < 1e-9, f"got {rho}")
    beta = ilap_py.beta_star(1, 0.05, 0.01, 1.0, 10, 5, 2, 0.2, 1.0)
    check("beta_star finite", beta > 0.0, f"got {beta}")
    nu = ilap_py.nu_default("contextual", 11.47, 10, 5)
    check("nu_default", abs(nu - 0.6545168779609043) < 1e-9, f"got {nu}")
    sw, inst = ilap_py.theoretical_bound("contextual", rho, 10, 5, 10, 200, 1.0, False)
    check("theoretical_bound", sw > 0 and sw == inst, f"got {(sw, inst)}")

    # Instance generation is deterministic and bounded.
    a = ilap_py.synth_instance(4, 3, 2, 7)
    b = ilap_py.synth_instance(4, 3, 2, 7)
    check("synth determinism", a == b)
    flat = [v for row in a for v in row]
    check("synth bounded", max(abs(v) for v in flat) <= 1.0 + 1e-9)

    # Full simulation loop: bitwise repeatable, and the clairvoyant
    # reference has exactly zero regret.
    config = "algorithm = ilap-cx\nN = 6\nM = 4\nR = 2\nT = 30\nseeds = 0,1\n"
    first = ilap_py.simulate(config)
    second = ilap_py.simulate(config)
    check("simulate seeds", [r["seed"] for r in first] == [0, 1])
    check(
        "simulate determinism",
        all(x["csv"] == y["csv"] for x, y in zip(first, second)),
    )
    check(
        "simulate coverage flag",
        all(r["coverage_held"] in (True, False) for r in first),
    )
    oracle = ilap_py.simulate(config.replace("ilap-cx", "oracle"))
    check(
        "oracle zero regret",
        all(r["final_cum_regret"] == 0.0 for r in oracle),
        f"got {[r['final_cum_regret'] for r in oracle]}",
    )

    # Errors surface as ValueError with a message, not as panics.
    try:
        ilap_py.solve([[0.5], [0.5, 0.5]], [1, 1], [1])
    except ValueError:
        check("ragged theta rejected", True)
    else:
        sys.exit("FAIL ragged theta rejected")
    try:
        ilap_py.simulate("algorithm = nonsense\n")
    except ValueError:
        check("bad config rejected", True)
    else:
        sys.exit("FAIL bad config rejected")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
