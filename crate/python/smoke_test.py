"""Exercises the Python extension end to end on the smoke config.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/nacs-*.whl
"""

import json
import pathlib
import sys

import nacs

ROOT = pathlib.Path(__file__).resolve().parent.parent
CONFIG = (ROOT / "configs" / "smoke.json").read_text()
GOLDEN = ROOT / "crates" / "cli" / "tests" / "golden"


def main():
    choice, soft = nacs.gumbel_sample([0.0, 1.0, -1.0], 0.5, 11)
    assert 0 <= choice < 3 and abs(sum(soft) - 1.0) < 1e-12

    est = json.loads(
        nacs.estimate(CONFIG, (GOLDEN / "network.json").read_text(), (GOLDEN / "accel.json").read_text())
    )
    assert est["legal"], est["legality"]
    print("estimate cycles", est["report"]["cycles"])

    passed, checked, mismatches = nacs.oracle_check(CONFIG)
    assert passed and checked > 0 and mismatches == 0
    print("oracle sweep", checked, "configs")

    a = nacs.cosearch(CONFIG, seed=4)
    assert a == nacs.cosearch(CONFIG, seed=4)
    co = json.loads(a)
    assert co["legality"]["violations"] == []
    print("cosearch", co["choices"], "cost", co["hw_cost"], "acc", co["proxy_accuracy"])

    sq = json.loads(nacs.seq(CONFIG, seed=4))
    print("seq", sq["choices"], "cost", sq["hw_cost"])

    rnd = json.loads(nacs.random_search(CONFIG))
    assert rnd["pareto"], "empty front"
    print("random front", [(p["accuracy"], p["cost"]) for p in rnd["pareto"]])

    try:
        nacs.cosearch("{}")
    except ValueError as e:
        print("bad config rejected:", str(e).splitlines()[0])
    else:
        sys.exit("bad config accepted")
    print("ok")


if __name__ == "__main__":
    main()
