"""Frozen numpy reference values for geometry and solver primitives.

Inputs are closed-form so the Rust side can rebuild them exactly:

    python3 gen_oracles.py > oracles.json
"""
import json

import numpy as np
from scipy.stats import norm

SLA18 = np.array([0, 1, 2, 3, 4, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19], dtype=float)
SLA10 = np.array([0, 3, 4, 5, 6, 7, 11, 16, 18, 19], dtype=float)
GRID = np.arange(-60.0, 60.0 + 1e-9, 2.0)


def steer(pos, deg):
    return np.exp(1j * np.pi * pos * np.sin(np.deg2rad(deg)))


def deriv(pos, deg):
    return 1j * np.pi * pos * np.cos(np.deg2rad(deg)) * steer(pos, deg)


def inv_mills(x):
    return np.exp(norm.logpdf(x) - norm.logcdf(x))


def cplx(v):
    return [[float(z.real), float(z.imag)] for z in np.atleast_1d(v)]


A = np.stack([steer(SLA10, g) for g in GRID], axis=1)
B = np.stack([deriv(SLA10, g) for g in GRID], axis=1)
m = np.arange(len(GRID))
n = np.arange(len(SLA10))
y = np.where(n % 2 == 0, 1.0, -1.0) + 1j * np.where(n % 3 == 0, -1.0, 1.0)
x = (0.1 * (m % 5) - 0.2) + 1j * (0.05 * (m % 3))
beta = 0.9 * np.sin(0.7 * m)  # degrees

C = A + B * np.deg2rad(beta)[None, :]
fit = C @ x
d = y.real * fit.real + 1j * y.imag * fit.imag
vt = d + inv_mills(d.real) + 1j * inv_mills(d.imag)
v = y.real * vt.real + 1j * y.imag * vt.imag

lam, alpha, eta = 0.7, 0.5, 1e-6
w = (np.abs(x) ** 2 + eta) ** (alpha / 2 - 1)
x_new = np.linalg.inv(C.conj().T @ C + lam * np.diag(w)) @ (C.conj().T @ v)

# scalar gap fit at grid index 40 (20 deg) with x = 0.8 - 0.3j there only
k = 40
xk = 0.8 - 0.3j
b = B[:, k]
a = A[:, k]
beta_scalar = np.rad2deg(np.real(np.conj(xk) * (b.conj() @ (v - a * xk))) / (np.linalg.norm(b) ** 2 * abs(xk) ** 2))

print(json.dumps({
    "steer_sla18_20.56": cplx(steer(SLA18, 20.56)),
    "deriv_sla18_-10.28": cplx(deriv(SLA18, -10.28)),
    "compute_v": cplx(v),
    "update_x": cplx(x_new),
    "beta_scalar_deg": float(beta_scalar),
    "i_prime": {str(t): -float(inv_mills(t)) for t in [-30.0, -5.0, -1.0, 0.0, 0.5, 3.0, 8.0]},
}, indent=1))
