"""Landau-Zener formula vs direct two-level sweeps, and purity of the crossing mixture over p and the phase."""

import numpy as np

from optransport import models, transport as tr, verification
from optransport.spectral import Grid


def main():
    print("T      eps     V     aleph   p(formula)     p(sweep)       diff")
    for T, e, v, a in ((100, 1e-2, 1.0, 1.0), (200, 1e-2, 0.5, 2.0), (50, 2e-2, 0.7, 2.0), (400, 5e-3, 1.0, 0.5)):
        pf, ps = tr.landau_zener_p(T, e, v, a), tr.landau_zener_sweep(T, e, v, a)
        print(f"{T:<6} {e:<7} {v:<5} {a:<7} {pf:.10f}   {ps:.10f}   {abs(pf - ps):.1e}")

    fam = models.crossing_family()
    ctx = verification.model_context(fam, Grid.uniform(20001))
    print("\nfinal purity of the post-crossing mixture (rows p, columns phase)")
    phases = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    print("p     " + " ".join(f"{x:8.3f}" for x in phases))
    for p in (0.0, 0.25, 0.5, 0.75, 1.0):
        pur = []
        for ph in phases:
            rho, _ = tr.transport_crossing(ctx, 0, 0, 1, p, ph, 100.0, fam.info["s_star"], 10,
                                           density_mode="exact", family=fam)
            pur.append(np.real(np.trace(rho[-1] @ rho[-1])))
        print(f"{p:<5} " + " ".join(f"{x:8.5f}" for x in pur))


if __name__ == "__main__":
    main()
