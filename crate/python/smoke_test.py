"""Smoke test for the cascade_forecast extension module.

Build and run from the repository root:

    cargo build -p cascade-py --release
    cp target/release/libcascade_forecast.so python/cascade_forecast.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cascade_forecast as cf


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    k = cf.Kernel()
    assert close(k.c, 1.0 / (300.0 * (1.0 + 1.0 / 0.242)))
    assert close(k.mass(0.0, math.inf), 1.0, 1e-12)
    assert k.phi(10.0) == k.c

    # Micro-cascade in seconds: c = 0.1/min, s0 = 10 min, theta = 1.
    cfg = cf.Config("[kernel]\nc = 0.0016666666666666668\ns0 = 600.0\ntheta = 1.0\nnormalized = false\n")
    c = cf.Cascade("m1", [(0, None, 10, 0.0), (1, 0, 5, 300.0), (2, 0, 1500, 480.0)], final_size=6)
    assert len(c) == 3 and c.reshare_count(600.0) == 2
    r, n, ne = cf.exposure(c, 600.0, cfg)
    assert (r, n) == (2, 1515.0) and close(ne, 312.5)
    assert close(cf.estimate_p(c, 600.0, cfg), 2.0 / 312.5)

    for model in ("seismic", "weseer", "speed-only"):
        pts = cf.predict(c, model, [600.0, 1200.0], config=cfg)
        assert len(pts) == 2 and all("outcome" in p for p in pts), pts

    report = cf.whatif(c, 0, 600.0, config=cfg)
    assert [e["event_id"] for e in report["entries"]] == [1, 2]
    try:
        cf.whatif(c, 5, 3600.0, config=cfg)
        raise AssertionError("empty frame should raise")
    except cf.InsufficientDataError:
        pass

    lonely = cf.Cascade("lonely", [(0, None, 300, 0.0)])
    assert all(p["outcome"]["kind"] == "insufficient_data" for p in cf.predict(lonely))

    corpus = cf.simulate_corpus(6, seed=3)
    again = cf.simulate_corpus(6, seed=3)
    assert [x.to_json() for x in corpus] == [x.to_json() for x in again]
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "corpus.ndjson")
        cf.save_corpus(corpus, path)
        loaded = cf.load_corpus(path)
        assert [x.to_json() for x in loaded] == [x.to_json() for x in corpus]

    big = max(corpus, key=lambda x: x.final_size or 0)
    rec = cf.recommend(big, float(big.final_size), grid=[20.0, 140.0, 500.0])
    assert rec["best"] in (20.0, 140.0, 500.0)

    scored = sum(1 for x in corpus if (x.final_size or 0) > 0)
    ev = cf.evaluate(corpus, models=["seismic", "weseer"], top_m=min(3, scored))
    assert [m["model"] for m in ev["models"]] == ["seismic", "weseer"]
    try:
        cf.evaluate(corpus, top_m=scored + 1)
        raise AssertionError("oversized top_m should raise")
    except ValueError:
        pass

    print("smoke test passed")


if __name__ == "__main__":
    main()
