"""Regenerate tests/fixtures/mmse_oracle.json.

Independent Monte Carlo oracle for the Bernoulli-Gaussian MMSE.  It does not
import the package.  For each noise variance v, r = x + CN(0, v) is drawn per
mixture component with exact component proportions; the radial variable
|r|^2 / c ~ Exp(1) is stratified into n equal-probability cells.  Each sample
contributes the posterior variance E[|x|^2 | r] - |E[x | r]|^2 (Rao-Blackwell),
computed here from the component likelihoods with a log-sum-exp.

    python tests/oracles/make_mmse_oracle.py
"""
import json
import pathlib

import numpy as np

RHO, A = 0.1, 10.0
SAMPLES = 10_000_000
V_GRID = np.geomspace(1e-3, 1e3, 20)
SEED = 20240601
# single points used by the denoiser / extrinsic-variance examples
EXTRA_V = (0.1, 0.5)


def posterior_variance(u, v):
    # log-likelihoods of |r|^2 = u under "active" (CN(0, A+v)) and "zero" (CN(0, v))
    la = np.log(RHO) - np.log(np.pi * (A + v)) - u / (A + v)
    l0 = np.log1p(-RHO) - np.log(np.pi * v) - u / v
    m = np.maximum(la, l0)
    p = np.exp(la - m) / (np.exp(la - m) + np.exp(l0 - m))
    gain = A / (A + v)
    # E[|x|^2 | r] = p (gain^2 u + gain v); |E[x | r]|^2 = p^2 gain^2 u
    return p * (gain * gain * u + gain * v) - p * p * gain * gain * u


def estimate(v, rng):
    total, var_terms = 0.0, 0.0
    for weight, c in ((RHO, A + v), (1.0 - RHO, v)):
        n = int(round(weight * SAMPLES))
        strata = (np.arange(n) + rng.random(n)) / n
        u = -c * np.log1p(-strata)
        f = posterior_variance(u, v)
        total += weight * f.mean()
        # stratified estimator variance: pair adjacent cells
        d = f[1::2][: n // 2] - f[0::2][: n // 2]
        var_terms += weight**2 * np.sum(d**2) / 2 / n**2
    return total, float(np.sqrt(var_terms))


def main():
    rng = np.random.default_rng(SEED)
    rows = []
    for v in V_GRID:
        m, se = estimate(float(v), rng)
        rows.append({"v": float(v), "mmse": float(m), "stderr": se})
        print(f"v={v:.4e} mmse={m:.10e} se={se:.2e} rel={se / m:.1e}")
    extra = []
    for v in EXTRA_V:
        m, se = estimate(v, rng)
        extra.append({"v": v, "mmse": float(m), "stderr": se})
        print(f"v={v:.4e} mmse={m:.10e} se={se:.2e}")
    out = pathlib.Path(__file__).resolve().parents[1] / "fixtures" / "mmse_oracle.json"
    out.write_text(json.dumps({"rho_s": RHO, "active_var": A, "samples": SAMPLES,
                               "seed": SEED, "method": "stratified Rao-Blackwellized MC",
                               "points": rows, "extra_points": extra}, indent=2) + "\n")


if __name__ == "__main__":
    main()
