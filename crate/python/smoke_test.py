#!/usr/bin/env python3
"""Smoke test for the afem2d_py extension module.

Build the extension first, then run this script from the repository root:

    cargo build -p afem2d-py --release
    python3 python/smoke_test.py

The script locates the compiled cdylib under target/, exposes it under the
importable name afem2d_py, and exercises the bound API end to end.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_extension():
    candidates = [
        ROOT / "target" / "release" / "libafem2d_py.so",
        ROOT / "target" / "debug" / "libafem2d_py.so",
        ROOT / "target" / "release" / "libafem2d_py.dylib",
        ROOT / "target" / "debug" / "libafem2d_py.dylib",
    ]
    src = next((p for p in candidates if p.exists()), None)
    if src is None:
        sys.exit("extension not built; run: cargo build -p afem2d-py")
    tmp = Path(tempfile.mkdtemp(prefix="afem2d_py_"))
    shutil.copy2(src, tmp / "afem2d_py.so")
    sys.path.insert(0, str(tmp))
    import afem2d_py

    return afem2d_py


def main():
    afem = import_extension()

    # Catalog.
    problems = afem.list_problems()
    ids = [p[0] for p in problems]
    assert len(problems) == 5, problems
    assert "lshape_poisson" in ids

    # Mesh construction and refinement.
    m = afem.Mesh.unit_square()
    assert m.num_elements == 2 and m.num_vertices == 4
    r = m.refine(m.element_ids()[:1])
    r.check_conforming()
    assert r.num_elements == 4, r.num_elements
    u2 = m.uniform_refine().uniform_refine()
    assert u2.num_elements == 8
    assert abs(m.min_angle() - math.pi / 4) < 1e-12
    round_trip = afem.Mesh.parse(m.to_text())
    assert round_trip.to_text() == m.to_text()

    # Marking.
    marked = afem.dorfler_mark([9.0, 4.0, 1.0, 1.0], 0.5)
    assert marked == [0], marked

    # Rate fitting.
    xs = [10.0 * k for k in range(1, 7)]
    slope = afem.fit_rate(xs, [x**-0.5 for x in xs])
    assert abs(slope + 0.5) < 1e-12, slope

    # Single solve on a uniform mesh.
    dofs, eta, err = afem.solve_once("lshape_poisson", refinements=2)
    assert dofs > 0 and eta > 0 and err > 0

    # A short adaptive run.
    trace = afem.run("lshape_poisson", max_dofs=800)
    recs = trace.records
    assert len(recs) >= 4
    assert recs[-1]["dofs"] >= 800
    etas = [r["eta"] for r in recs]
    assert etas[-1] < etas[0]
    assert trace.eta_slope < 0
    assert trace.csv.startswith("k,elements,dofs,eta")
    assert max(trace.complexity) <= 30.0

    # Eigenvalue variant surfaces lambda.
    eig = afem.run("square_laplace_eigen", max_dofs=500)
    lam = eig.records[-1]["lambda"]
    assert lam >= math.pi**2 - 1e-9, lam

    # Errors arrive as Python exceptions.
    try:
        afem.run("not_a_problem", max_dofs=100)
    except RuntimeError:
        pass
    else:
        raise AssertionError("unknown problem should raise")

    print("smoke test passed")


if __name__ == "__main__":
    main()
