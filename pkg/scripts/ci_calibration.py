"""Empirical coverage of the 95% intervals of the single-resonance and joint microwave fits."""
import argparse
import math

import numpy as np

from cavityeo import recipes
from cavityeo.model import SystemConfig

MHZ = 2 * math.pi * 1e6


def lorentzian(noise, seed):
    omega = np.linspace(-80, 80, 201) * MHZ
    spec = recipes.synthetic_spectrum(omega, recipes.lorentzian_reflection(omega, 26 * MHZ, 10 * MHZ), noise, seed)
    return recipes.lorentzian_reflection_fit(spec).result, {"kappa": 26 * MHZ, "eta": 10 / 26}


def microwave(noise, seed):
    cfg = SystemConfig.build("anti_stokes", 26 * MHZ, 10 * MHZ, 10 * MHZ, 4 * MHZ, g0=2 * math.pi * 37,
                             j=1e5 * 26 * MHZ)
    sweep = recipes.SweepSpec("microwave", np.linspace(-30, 30, 401) * MHZ, (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
                              "lorentzian")
    ds = recipes.generate_synthetic_dataset(cfg, sweep, noise, seed)
    fit = recipes.joint_stationary_microwave_fit(ds.spectra, cfg.kappa_e, cfg.microwave.kappa_ext)
    truth = {"kappa_e": cfg.kappa_e, "kappa_e_ext": cfg.microwave.kappa_ext}
    truth.update({f"d_kappa_{k}": v for k, v in enumerate(ds.truth["delta_kappa_e"])})
    return fit.result, truth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--snr-db", type=float, default=20.0)
    ap.add_argument("--recipe", choices=("lorentzian", "microwave"), default="lorentzian")
    args = ap.parse_args()

    recipe = {"lorentzian": lorentzian, "microwave": microwave}[args.recipe]
    noise = recipes.NoiseSpec(snr_db=args.snr_db)
    hits, z = {}, {}
    for seed in range(args.seeds):
        res, truth = recipe(noise, seed)
        for name, value in truth.items():
            lo, hi = res.confidence_intervals[name]
            hits[name] = hits.get(name, 0) + (lo <= value <= hi)
            z.setdefault(name, []).append((res[name] - value) / res.stderr[name])
    print("parameter      coverage  mean z  std z")
    for name in hits:
        print(f"{name:14s} {hits[name] / args.seeds:8.2f}  {np.mean(z[name]):6.2f}  {np.std(z[name]):5.2f}")


if __name__ == "__main__":
    main()
