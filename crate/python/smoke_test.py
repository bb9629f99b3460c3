"""Smoke test for the pymandala extension module.

Build and install first, e.g. `pip install ./crates/py`, then run
`python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import pymandala as pm


def main():
    p = pm.Population([0.0], [[1.0]])
    q = pm.Population([1.0], [[2.0]])

    b = pm.distance_matrix(p, q, kind="bhattacharyya")
    expected = 1.0 / 12.0 + 0.5 * math.log(1.5 / math.sqrt(2.0))
    assert abs(b.trace() - expected) < 1e-12, b.trace()

    scalars = pm.scalar_distances(p, q, s=0.5)
    assert abs(scalars["dB"] - b.trace()) < 1e-12
    assert abs(scalars["dC"] - b.trace()) < 1e-12
    assert abs(scalars["dKL"] - 1.0) < 1e-12
    assert 0.0 <= scalars["dH"] < 1.0
    assert pm.hellinger(0.0) == 0.0

    samples = [[math.sin(3 * k + j) + 0.1 * j for j in range(4)] for k in range(40)]
    a = pm.Population.estimate(samples, ridge=1e-3)
    c = pm.Population.estimate([[x * 1.5 + 0.2 for x in row] for row in samples], ridge=1e-3)
    assert a.dim == 4 and a.count == 40
    for kind in ("mahalanobis", "bhattacharyya", "chernoff", "kl"):
        d = pm.distance_matrix(a, c, kind=kind, s=0.3)
        assert d.dim == 4 and math.isfinite(d.trace())

    d = pm.distance_matrix(a, c, kind="chernoff", s=0.3)
    phi = d.accumulate()
    assert len(phi) == 4
    assert abs(sum(phi) - 2 * sum(map(sum, d.to_list()))) < 1e-9

    dn = pm.cluster([[0, 1, 4], [1, 0, 5], [4, 5, 0]])
    assert dn.merges == [(0, 1, 1.0, 3), (2, 3, 5.0, 4)], dn.merges
    assert dn.is_monotone()
    assert dn.cut(2) == [0, 0, 1]
    assert pm.cluster(d.to_list(), accelerated=True).merges == pm.cluster(d.to_list()).merges

    with tempfile.TemporaryDirectory() as tmp:
        stem = Path(tmp) / "pop"
        header = a.save(str(stem))
        back = pm.Population.load(str(header))
        assert back.mean == a.mean and back.cov == a.cov
        dn.save(str(Path(tmp) / "dn.json"))
        assert pm.Dendrogram.load(str(Path(tmp) / "dn.json")).merges == dn.merges
        pm.render_heatmap([float(i) for i in range(16)], str(Path(tmp) / "h.ppm"), scale=2)
        assert (Path(tmp) / "h.ppm").stat().st_size > 0

    center, ring = pm.window_means([1.0] * 16, window=2)
    assert center == ring == 1.0

    report = pm.self_check("fast")
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert not failed, failed

    print("pymandala smoke test passed ({} self-checks)".format(len(report["checks"])))


if __name__ == "__main__":
    main()
