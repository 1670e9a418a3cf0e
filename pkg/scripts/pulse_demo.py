"""On-resonance normalized reflection during a pump pulse, through the full detection chain.

Writes one CSV per (configuration, probe) pair with R(t) after heterodyne
detection and digital down-conversion.
"""
import argparse
from pathlib import Path

import numpy as np

from cavityeo import io, timedomain
from cavityeo.model import reference_device

PAIRS = (("symmetric", "microwave"), ("symmetric", "stokes"), ("stokes", "microwave"),
         ("stokes", "stokes"), ("anti_stokes", "microwave"), ("anti_stokes", "anti_stokes"))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--power", type=float, default=0.5, help="peak pump power [W]")
    ap.add_argument("--duration", type=float, default=250e-9, help="pulse length [s]")
    ap.add_argument("--snr-db", type=float, default=None, help="per-sample SNR of the detector current")
    ap.add_argument("--out", type=Path, default=Path("pulse_demo"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    pulse = timedomain.PulseSpec(args.duration, args.power)
    for case, probe in PAIRS:
        cfg = reference_device(case)
        noise = 0.0 if args.snr_db is None else timedomain.noise_std_for_snr(1.0, args.snr_db)
        m = timedomain.simulate_pulse_measurement(cfg, pulse, 0.0, probe, timedomain.DetectionSpec(noise_std=noise),
                                                  t_before=400e-9, t_after=600e-9)
        trace = m.r_matrix[:, 0]
        mid = int(np.argmin(np.abs(m.r_times - 0.8 * args.duration)))
        print(f"{case:12s} {probe:12s} R(mid-pulse) = {trace[mid]:8.4f}  range [{trace.min():.4f}, {trace.max():.4f}]")
        dt = float(m.r_times[1] - m.r_times[0])
        io.write_trace_csv(args.out / f"{case}_{probe}.csv",
                           timedomain.TimeTrace(dt, float(m.r_times[0]), trace, timedomain.TraceKind.POWER),
                           configuration=case, probe=probe, power=args.power)


if __name__ == "__main__":
    main()
