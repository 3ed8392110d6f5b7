"""Smoke test for the arnet extension module.

Build and install it first:  maturin develop --release -m crates/python/Cargo.toml
"""
import os
import tempfile

import arnet


def main():
    assert "transitivity" in arnet.kernels()
    assert len(arnet.baseline_models()) == 5

    params = {"globals": {"a": 2.0, "b": 2.0}, "xi": 0.8, "eta": 0.9}
    s = arnet.simulate("transitivity", p=10, n=25, params=params, seed=3, burn_in=50)
    assert (s.p, s.n, len(s)) == (10, 25, 25)
    again = arnet.simulate("transitivity", p=10, n=25, params=params, seed=3, burn_in=50)
    assert s.edge_counts() == again.edge_counts()

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "series.csv")
        s.save(path)
        back = arnet.SnapshotSeries.load(path)
        assert [back.snapshot(t) for t in range(back.n)] == [s.snapshot(t) for t in range(s.n)]

    toy = arnet.SnapshotSeries([
        [[0, 1, 0], [1, 0, 1], [0, 1, 0]],
        [[0, 1, 1], [1, 0, 0], [1, 0, 0]],
    ])
    d = arnet.diagnostics(toy)
    assert abs(d["density"][0] - 2 / 3) < 1e-12
    assert abs(d["growth"][0] - 1 / 3) < 1e-12

    report = arnet.fit(s, "transitivity", config={"init_grid": [0.5, 0.8]})
    assert len(report["params"]) == 22
    for p in report["params"]:
        lo, hi = p["ci"]
        assert lo <= p["estimate"] <= hi
    imom = arnet.fit(s, "transitivity", method="imom", config={"init_grid": [0.5]})
    assert imom["final"] is None and imom["imom"] is not None

    table = arnet.compare_models(s, split=22, steps=[1, 2], mc_paths=20, config={"init_grid": [0.5]})
    assert [m["model"] for m in table["models"]] == arnet.baseline_models()

    probs = arnet.forecast(s, "global-ar", step=2)
    assert len(probs) == 10 and all(abs(probs[i][i]) == 0 for i in range(10))

    fpr, tpr, auc = arnet.roc([0.9, 0.1, 0.8, 0.3], [True, False, True, False])
    assert auc == 1.0 and fpr[0] == 0 and tpr[-1] == 1

    try:
        arnet.fit(s, "no-such-kernel")
    except ValueError as e:
        assert "no-such-kernel" in str(e)
    else:
        raise AssertionError("expected ValueError")

    print("arnet smoke test: ok")


if __name__ == "__main__":
    main()
