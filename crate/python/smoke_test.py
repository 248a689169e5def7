"""Quick end-to-end check of the Python bindings.

Build and install first:
    pip install maturin patchelf
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/trajstat-*.whl
"""

import math

import trajstat


def main():
    p = trajstat.ModelParams(4)
    assert p.sites == 4 and p.substeps == 10
    print(p)

    checks = trajstat.validate(p, steps=30)
    for name, dev, tol, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {dev:.2e} (tol {tol:.0e})")
    assert all(c[3] for c in checks)

    rec = trajstat.trajectory(p, steps=50, seed=7, chi=16)
    assert len(rec) == 50 and all(len(r) == 4 and set(r) <= {0, 1} for r in rec)
    assert rec == trajstat.trajectory(p, steps=50, seed=7, chi=16)

    log_p = trajstat.cluster_log_p(p, ell=2, tau_max=4)
    assert all(b <= a + 1e-12 for a, b in zip(log_p, log_p[1:]))
    assert abs(trajstat.free_energy(p, 2, 4) + log_p[-1]) < 1e-12
    merged = trajstat.cluster_log_p(p, ell=2, tau_max=4)[-1]
    assert abs(trajstat.two_cluster_log_p(p, 2, 2, delta_t=0) - merged) < 1e-10

    # no drive, no interaction: records from |0>^L are i.i.d. clicks
    free = trajstat.ModelParams(3, omega=0.0, v=0.0)
    q = math.sin(free.gamma0 * free.dt) ** 2
    recs = [trajstat.trajectory(free, 2000, seed) for seed in range(4)]
    est, err = trajstat.empirical_cluster_prob(recs, 1, 1)
    assert abs(est - (1 - q)) < 4 * err + 1e-3, (est, err, 1 - q)

    noisy = trajstat.readout_errors(rec, 0.5, seed=3)
    assert len(noisy) == len(rec)

    c = trajstat.autocorrelation(p, delta_max=3)
    assert len(c) == 3
    print("c(delta) =", ", ".join(f"{x:.4e}" for x in c))
    print("ok")


if __name__ == "__main__":
    main()
