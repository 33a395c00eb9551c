#!/usr/bin/env python3
"""Reference knee detector used to freeze test fixtures.

Independent implementation of the Kneedle algorithm (Satopaa et al. 2011)
for convex decreasing curves, mirroring the semantics of the `kneed`
package: clip-mode local extrema via scipy, threshold Tmx = D[max] - S *
mean(dx), minima reset the bar to zero, online mode keeps scanning and
returns the last confirmed knee. No smoothing stage, since every input
here is an already-sorted monotone vector.

Writes crates/gnpn/tests/fixtures/kneedle_cases.json. Run from anywhere:

    python3 tools/kneedle_reference.py
"""

import json
from pathlib import Path

import numpy as np
from scipy.signal import argrelextrema


def kneedle_reference(values, sensitivity=1.0, online=True):
    """Return the knee index of a non-increasing vector, or None."""
    y = np.asarray(values, dtype=float)
    n = y.size
    if n < 3 or np.any(np.diff(y) > 0) or y[0] == y[-1]:
        return None
    x = np.linspace(0.0, 1.0, n)
    y_norm = (y - y[-1]) / (y[0] - y[-1])
    d = (1.0 - y_norm) - x

    maxima = argrelextrema(d, np.greater_equal, mode="clip")[0]
    minima = argrelextrema(d, np.less_equal, mode="clip")[0]
    if maxima.size == 0:
        return None
    step = float(np.abs(np.diff(x)).mean())
    tmx = d[maxima] - sensitivity * step

    knee = None
    threshold = 0.0
    threshold_index = 0
    max_cursor = 0
    for i in range(int(maxima[0]), n - 1):
        if max_cursor < maxima.size and maxima[max_cursor] == i:
            threshold = tmx[max_cursor]
            threshold_index = i
            max_cursor += 1
        if np.isin(i, minima):
            threshold = 0.0
        if d[i + 1] < threshold:
            knee = threshold_index
            if not online:
                break
    return knee


def two_plateau(n_high, n_low, high, low, decay):
    """Sorted-magnitudes shape: a signal plateau above a noise floor."""
    vals = [high * (1.0 - decay * k) for k in range(n_high)]
    vals += [low * (1.0 - decay * k) for k in range(n_low)]
    return vals


def noisy_power_decay(n, exponent, seed):
    rng = np.random.default_rng(seed)
    base = (np.arange(n) + 1.0) ** -exponent
    noisy = base * (1.0 + 0.05 * rng.standard_normal(n))
    return np.sort(noisy)[::-1].tolist()


def build_cases():
    handbook = [1.0, 0.5, 0.25, 0.12, 0.01, 0.009, 0.008, 0.007]
    staircase = [1.0, 0.98, 0.96, 0.5, 0.48, 0.46, 0.05, 0.04, 0.03, 0.02]
    cases = [
        ("handbook_halving", handbook, 1.0, True),
        ("handbook_affine_rescaled", [2.5 * v + 0.3 for v in handbook], 1.0, True),
        ("harmonic_decay", [1.0 / (k + 1) for k in range(20)], 1.0, True),
        ("inverse_square_decay", [(k + 1.0) ** -2 for k in range(15)], 1.0, True),
        ("exponential_decay", np.exp(-np.arange(25) / 3.0).tolist(), 1.0, True),
        (
            "plateau_gap_precision_scale",
            two_plateau(8, 20, 1.8e-3, 1.0e-4, 0.01),
            1.0,
            True,
        ),
        ("staircase_online_last", staircase, 1.0, True),
        ("staircase_offline_first", staircase, 1.0, False),
        ("flat_shoulder_ties", [1.0, 0.6, 0.6, 0.6, 0.1, 0.05, 0.02, 0.0], 1.0, True),
        ("noisy_decay_seeded", noisy_power_decay(30, 1.5, 20240817), 1.0, True),
        ("low_sensitivity_three_points", [1.0, 0.1, 0.0], 0.5, True),
        ("default_sensitivity_three_points", [1.0, 0.1, 0.0], 1.0, True),
        ("strict_sensitivity_gentle_curve", [1.0 / (k + 1) for k in range(20)], 5.0, True),
        ("linear_ramp", np.linspace(1.0, 0.0, 12).tolist(), 1.0, True),
    ]
    out = []
    for name, values, s, online in cases:
        knee = kneedle_reference(values, sensitivity=s, online=online)
        out.append(
            {
                "name": name,
                "sensitivity": s,
                "online": online,
                "values": [float(v) for v in values],
                "knee_index": None if knee is None else int(knee),
                "threshold": None if knee is None else float(values[knee]),
            }
        )
    return out


def main():
    root = Path(__file__).resolve().parents[1]
    fixture = root / "crates" / "gnpn" / "tests" / "fixtures" / "kneedle_cases.json"
    cases = build_cases()
    fixture.write_text(
        json.dumps({"generator": "tools/kneedle_reference.py", "cases": cases}, indent=2)
        + "\n"
    )
    width = max(len(c["name"]) for c in cases)
    for c in cases:
        knee = "no knee" if c["knee_index"] is None else f"index {c['knee_index']}"
        print(f"{c['name']:<{width}}  S={c['sensitivity']:<3} online={c['online']!s:<5} -> {knee}")
    print(f"\nwrote {fixture.relative_to(root)} ({len(cases)} cases)")


if __name__ == "__main__":
    main()
