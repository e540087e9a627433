"""Requested vs measured T60 and direct-path delay of simulated RIRs over random rooms.

    python3 scripts/rir_decay.py --rooms 5 --rt60 0.2 0.4 0.6
"""
import argparse

import numpy as np

from spkloc.room_sim import SOUND_SPEED, ScenarioConstraints, generate_scenario, schroeder_t60, simulate_rir


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rooms", type=int, default=5)
    ap.add_argument("--rt60", type=float, nargs="+", default=[0.2, 0.4, 0.6])
    ap.add_argument("--absorption", choices=("calibrated", "sabine", "eyring"), default="calibrated")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'rt60':>6} {'room (m)':>18} {'T60 (s)':>8} {'rel err':>8} {'delay err':>10}")
    for rt60 in args.rt60:
        c = ScenarioConstraints(rt60_range=(rt60, rt60))
        errs = []
        for k in range(args.rooms):
            sc = generate_scenario((args.seed, k), c)
            rir = simulate_rir(sc, 0, absorption=args.absorption)[sc.array.reference_mic]
            t60 = schroeder_t60(rir.taps, rir.sample_rate)
            mic = sc.array.mic_positions[sc.array.reference_mic]
            delay = np.linalg.norm(mic - sc.source_positions[0]) / SOUND_SPEED * rir.sample_rate
            errs.append(t60 / rt60 - 1)
            dims = "x".join(f"{d:.1f}" for d in sc.room_dims)
            print(f"{rt60:>6.2f} {dims:>18} {t60:>8.3f} {errs[-1]:>+8.1%} "
                  f"{np.argmax(np.abs(rir.taps)) - delay:>+10.2f}")
        print(f"{'':>6} {'mean |rel err|':>18} {np.mean(np.abs(errs)):>17.1%}")


if __name__ == "__main__":
    main()
