"""Pure-numpy reference implementation of the sorted split scan.

Semantics (the compiled backend must match bit for bit):

* ``vals``/``g``/``h`` are the node's non-missing rows sorted ascending by
  feature value; ``gmiss``/``hmiss`` are the sums over the missing block and
  ``gtot``/``htot`` the full node sums (missing included).
* Candidate thresholds sit at midpoints between consecutive distinct values;
  a candidate is valid only when the midpoint actually separates (strictly
  above the lower value).
* Every candidate is scored twice — missing block on the left and on the
  right — and the higher gain wins, left preferred on ties.
* Gain = 0.5*(GL^2/(HL+lam) + GR^2/(HR+lam) - Gtot^2/(Htot+lam)) - gamma,
  with both children required to carry hessian mass >= min_child_weight.
* Selection keeps the first maximum (lowest threshold wins equal gains).

Returns ``(best_gain, best_pos, missing_left)`` where ``best_pos`` is the
index of the last left-side row in the sorted arrays, or -1 when no valid
split exists.
"""
from __future__ import annotations

import numpy as np


def scan_sorted_feature(
    vals: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    gtot: float,
    htot: float,
    gmiss: float,
    hmiss: float,
    lam: float,
    gamma: float,
    min_child_weight: float,
) -> tuple[float, int, bool]:
    n = vals.shape[0]
    if n < 2:
        return (-np.inf, -1, True)

    gl = np.cumsum(g)[:-1]
    hl = np.cumsum(h)[:-1]
    thr = 0.5 * (vals[:-1] + vals[1:])
    separates = thr > vals[:-1]

    with np.errstate(divide="ignore", invalid="ignore"):
        parent = gtot * gtot / (htot + lam)

        gl_left = gl + gmiss
        hl_left = hl + hmiss
        gr_left = gtot - gl_left
        hr_left = htot - hl_left
        gain_left = (
            0.5 * (gl_left * gl_left / (hl_left + lam) + gr_left * gr_left / (hr_left + lam) - parent)
            - gamma
        )
        ok_left = separates & (hl_left >= min_child_weight) & (hr_left >= min_child_weight)

        gr_right = gtot - gl
        hr_right = htot - hl
        gain_right = (
            0.5 * (gl * gl / (hl + lam) + gr_right * gr_right / (hr_right + lam) - parent)
            - gamma
        )
        ok_right = separates & (hl >= min_child_weight) & (hr_right >= min_child_weight)

    gain_left = np.where(ok_left & ~np.isnan(gain_left), gain_left, -np.inf)
    gain_right = np.where(ok_right & ~np.isnan(gain_right), gain_right, -np.inf)

    left_first = gain_left >= gain_right
    gain = np.where(left_first, gain_left, gain_right)
    pos = int(np.argmax(gain))
    best = float(gain[pos])
    if not np.isfinite(best):
        return (-np.inf, -1, True)
    return (best, pos, bool(left_first[pos]))
