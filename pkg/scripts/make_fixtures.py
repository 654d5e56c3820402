"""Regenerate the shipped CFR fixtures under src/motnet/data.

Each fixture gets a ``.meta.json`` sidecar describing what it is calibrated
to reproduce.  Output is deterministic.
"""

import json
from pathlib import Path

import numpy as np

from motnet.plc import (DELTA_F_HZ, Cfr, channel_gain, cir_from_cfr, default_grid, power_delay_profile,
                        rms_delay_spread, synth_cfr, to_db, write_cfr_csv)

DATA = Path(__file__).resolve().parents[1] / "src" / "motnet" / "data"
N = 200


def gain_fixture(target_db=-34.36, seed=3):
    cfr = synth_cfr(25, 2e-6, "exponential", seed=seed, freqs=default_grid())
    scale = np.sqrt(10 ** (target_db / 10) / channel_gain(cfr))
    cfr = Cfr(cfr.freqs, cfr.values * scale)
    meta = {
        "description": "multipath CFR on the 0-40 MHz, 200 kHz grid, scaled to a target average gain",
        "delta_f_hz": DELTA_F_HZ,
        "points": cfr.n,
        "target_gain_db": target_db,
        "gain_db": to_db(channel_gain(cfr)),
        "seed": seed,
    }
    return cfr, meta


def spread_fixture(target_s, n_taps, seed):
    """Sparse exponential-decay CIR on integer tap positions; the grid spacing
    is chosen so the RMS delay spread equals ``target_s`` exactly."""
    rng = np.random.default_rng(seed)
    pos = np.sort(rng.choice(np.arange(1, N // 2), n_taps - 1, replace=False))
    pos = np.concatenate([[0], pos])
    taps = np.zeros(N, dtype=complex)
    taps[pos] = np.exp(-pos / 30.0) * np.exp(1j * rng.uniform(0, 2 * np.pi, n_taps))
    spread_taps = rms_delay_spread(power_delay_profile(cir_from_cfr(Cfr(np.arange(N), np.fft.fft(taps)))), 1.0)
    delta_f = spread_taps / (N * target_s)
    cfr = Cfr(np.arange(N) * delta_f, np.fft.fft(taps))
    cir = cir_from_cfr(cfr)
    meta = {
        "description": "time-scaled CFR: tap spacing 1/(N*delta_f) stretched so the RMS delay spread "
                       "lands on the target value in seconds",
        "delta_f_hz": delta_f,
        "points": N,
        "tap_spacing_s": cir.tap_spacing,
        "target_tau_rms_s": target_s,
        "tau_rms_s": rms_delay_spread(power_delay_profile(cir), cir.tap_spacing),
        "taps": int(n_taps),
        "seed": seed,
    }
    return cfr, meta


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    jobs = {
        "cfr_measured_gain": gain_fixture(),
        "cfr_switching_load": spread_fixture(10.8e-3, 14, seed=5),
        "cfr_resistive_load": spread_fixture(6e-3, 9, seed=6),
    }
    for name, (cfr, meta) in jobs.items():
        write_cfr_csv(cfr, DATA / f"{name}.csv")
        (DATA / f"{name}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        print(name, meta)


if __name__ == "__main__":
    main()
