"""Domain types for loops on the circle and fields on a truncated cylinder.

Conventions used throughout the package:

* The circle has period 1 and is sampled on ``n_t`` uniform points
  ``t_j = j / n_t``.
* A loop carries a complex component ``v`` and a Lie-algebra component
  ``eta``.  Lie-algebra values live in i*R; we store only the real
  coefficient ``a`` of ``a*i`` (see README for the sign dictionary).
* Fourier coefficients follow ``v(t) = sum_m v_m exp(2*pi*i*m*t)`` with
  modes in FFT order, so ``v_hat = fft(v_samples) / n_t``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Real coefficient of an element a*i of Lie(S^1) = i*R.
LieValue = float

TWO_PI = 2.0 * np.pi

#: Default loop resolution; resolves every experiment in this package
#: with spectral accuracy.  The usable Fourier band is |m| <= n_t/2 - 1.
DEFAULT_N_T = 64

_ROUNDTRIP_RTOL = 1e-12


def mode_numbers(n_t: int) -> np.ndarray:
    """Signed Fourier mode numbers in FFT order: 0, 1, ..., -2, -1."""
    return np.fft.fftfreq(n_t, d=1.0 / n_t).astype(int)


def t_samples(n_t: int) -> np.ndarray:
    return np.arange(n_t) / n_t


def grid_to_hat(samples: np.ndarray) -> np.ndarray:
    return np.fft.fft(samples) / samples.shape[-1]


def hat_to_grid(hat: np.ndarray) -> np.ndarray:
    return np.fft.ifft(hat) * hat.shape[-1]


def spectral_t_derivative(samples: np.ndarray) -> np.ndarray:
    """d/dt of periodic samples (complex in, complex out; real in, real out)."""
    n = samples.shape[-1]
    hat = np.fft.fft(samples, axis=-1)
    d = hat * (2j * np.pi * mode_numbers(n))
    out = np.fft.ifft(d, axis=-1)
    if np.isrealobj(samples):
        return out.real
    return out


class LoopConfig:
    """One loop-space point (v, eta) held in dual grid/Fourier form.

    Either representation may be supplied; the other is synthesized
    lazily and cached (instances are immutable by convention, so the
    cache is write-once).  When both are supplied they must agree under
    the DFT to relative tolerance 1e-12.
    """

    __slots__ = ("n_t", "_v_grid", "_v_hat", "_eta_grid", "_eta_hat")

    def __init__(self, *, v=None, v_hat=None, eta=None, eta_hat=None):
        if v is None and v_hat is None:
            raise ValueError("need v in grid or Fourier form")
        if eta is None and eta_hat is None:
            raise ValueError("need eta in grid or Fourier form")
        self._v_grid = None if v is None else np.asarray(v, dtype=complex)
        self._v_hat = None if v_hat is None else np.asarray(v_hat, dtype=complex)
        self._eta_grid = None if eta is None else np.asarray(eta, dtype=float)
        self._eta_hat = None if eta_hat is None else np.asarray(eta_hat, dtype=complex)
        sizes = {a.shape[-1] for a in (self._v_grid, self._v_hat, self._eta_grid, self._eta_hat)
                 if a is not None}
        if len(sizes) != 1:
            raise ValueError(f"inconsistent sample counts {sizes}")
        self.n_t = sizes.pop()
        if self.n_t < 8:
            raise ValueError("n_t must be at least 8")
        if self._v_grid is not None and self._v_hat is not None:
            self._check_agreement(self._v_grid, self._v_hat, "v")
        if self._eta_grid is not None and self._eta_hat is not None:
            self._check_agreement(self._eta_grid, self._eta_hat, "eta")

    @staticmethod
    def _check_agreement(grid, hat, name):
        back = hat_to_grid(hat)
        scale = max(np.max(np.abs(grid)), 1e-300)
        if np.max(np.abs(back - grid)) > _ROUNDTRIP_RTOL * max(scale, 1.0):
            raise ValueError(f"{name}: grid and Fourier data disagree beyond 1e-12")

    # -- representation bookkeeping -------------------------------------
    @property
    def populated(self) -> dict:
        """Which representations were populated (lazily or at construction)."""
        return {
            "v": tuple(r for r, a in (("grid", self._v_grid), ("fourier", self._v_hat)) if a is not None),
            "eta": tuple(r for r, a in (("grid", self._eta_grid), ("fourier", self._eta_hat)) if a is not None),
        }

    @property
    def t(self) -> np.ndarray:
        return t_samples(self.n_t)

    @property
    def v(self) -> np.ndarray:
        if self._v_grid is None:
            self._v_grid = hat_to_grid(self._v_hat)
        return self._v_grid

    @property
    def v_hat(self) -> np.ndarray:
        if self._v_hat is None:
            self._v_hat = grid_to_hat(self._v_grid)
        return self._v_hat

    @property
    def eta(self) -> np.ndarray:
        if self._eta_grid is None:
            self._eta_grid = hat_to_grid(self._eta_hat).real
        return self._eta_grid

    @property
    def eta_hat(self) -> np.ndarray:
        if self._eta_hat is None:
            self._eta_hat = grid_to_hat(self._eta_grid.astype(complex))
        return self._eta_hat

    @property
    def modes(self) -> np.ndarray:
        return mode_numbers(self.n_t)

    def mode(self, m: int) -> complex:
        """Fourier coefficient of exp(2*pi*i*m*t); |m| must stay below n_t/2."""
        if abs(m) >= self.n_t // 2:
            raise ValueError(f"mode {m} outside resolved band of n_t={self.n_t}")
        return complex(self.v_hat[m % self.n_t])

    def eta_mean(self) -> float:
        return float(np.mean(self.eta))

    def allclose(self, other: "LoopConfig", atol: float = 1e-12) -> bool:
        return (self.n_t == other.n_t
                and np.allclose(self.v, other.v, atol=atol)
                and np.allclose(self.eta, other.eta, atol=atol))

    def __repr__(self):
        return f"LoopConfig(n_t={self.n_t}, max|v|={np.max(np.abs(self.v)):.3g}, eta_mean={self.eta_mean():.3g})"

    # -- serialization (JSON schema of the external interface) ----------
    def to_json_dict(self) -> dict:
        v = self.v
        return {
            "n_t": int(self.n_t),
            "v_re": v.real.tolist(),
            "v_im": v.imag.tolist(),
            "eta": self.eta.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LoopConfig":
        v = np.asarray(d["v_re"], dtype=float) + 1j * np.asarray(d["v_im"], dtype=float)
        if len(v) != d["n_t"]:
            raise ValueError("n_t does not match sample arrays")
        return cls(v=v, eta=np.asarray(d["eta"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path) -> "LoopConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CriticalLoop:
    """Critical loop with winding m: v = v0 exp(2*pi*i*m*t), eta = -2*pi*m.

    In the i-coefficient dictionary the multiplier value -2*pi*m is what
    balances mode m exactly (the per-mode rate eta + 2*pi*m vanishes);
    its action value is -pi*m for every homotopy parameter r.
    """

    m: int
    v0: complex = 1.0 + 0.0j

    def __post_init__(self):
        if abs(abs(self.v0) - 1.0) > 1e-12:
            raise ValueError("v0 must have unit modulus")

    @property
    def eta_value(self) -> float:
        return -TWO_PI * self.m

    def to_loop(self, n_t: int = DEFAULT_N_T) -> LoopConfig:
        t = t_samples(n_t)
        v = self.v0 * np.exp(2j * np.pi * self.m * t)
        eta = np.full(n_t, self.eta_value)
        return LoopConfig(v=v, eta=eta)


def dominant_winding(loop: LoopConfig) -> int:
    """Winding read off as the dominant Fourier mode of v."""
    return int(loop.modes[np.argmax(np.abs(loop.v_hat))])


@dataclass
class CylinderField:
    """A configuration (v, eta) on the truncated cylinder [s_min, s_max] x R/Z.

    The t-direction is periodic with period 1; the s-direction carries
    explicit boundary data.  eta is t-dependent in general and t-constant
    in Coulomb gauge.
    """

    s_min: float
    s_max: float
    v: np.ndarray      # (n_s, n_t) complex
    eta: np.ndarray    # (n_s, n_t) real

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=complex)
        self.eta = np.asarray(self.eta, dtype=float)
        if self.v.shape != self.eta.shape or self.v.ndim != 2:
            raise ValueError("v and eta must share a 2-d (n_s, n_t) shape")
        if not self.s_min < self.s_max:
            raise ValueError("need s_min < s_max")

    @property
    def n_s(self) -> int:
        return self.v.shape[0]

    @property
    def n_t(self) -> int:
        return self.v.shape[1]

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n_s - 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n_s)

    @property
    def t(self) -> np.ndarray:
        return t_samples(self.n_t)

    def slice_loop(self, i: int) -> LoopConfig:
        return LoopConfig(v=self.v[i], eta=self.eta[i])

    # -- CSV + JSON sidecar (external interface) -------------------------
    def to_csv(self, csv_path, sidecar_path=None) -> None:
        csv_path = Path(csv_path)
        s, t = self.s, self.t
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "t", "v_re", "v_im", "eta"])
            for i in range(self.n_s):
                for j in range(self.n_t):
                    w.writerow([f"{s[i]:.17g}", f"{t[j]:.17g}",
                                f"{self.v[i, j].real:.17g}", f"{self.v[i, j].imag:.17g}",
                                f"{self.eta[i, j]:.17g}"])
        sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
        sidecar.write_text(json.dumps({
            "s_min": self.s_min, "s_max": self.s_max,
            "n_s": self.n_s, "n_t": self.n_t,
        }, sort_keys=True))

    @classmethod
    def from_csv(cls, csv_path, sidecar_path=None) -> "CylinderField":
        csv_path = Path(csv_path)
        sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
        meta = json.loads(sidecar.read_text())
        n_s, n_t = meta["n_s"], meta["n_t"]
        v = np.zeros((n_s, n_t), dtype=complex)
        eta = np.zeros((n_s, n_t))
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        for k, row in enumerate(rows[1:]):
            i, j = divmod(k, n_t)
            v[i, j] = float(row[2]) + 1j * float(row[3])
            eta[i, j] = float(row[4])
        return cls(s_min=meta["s_min"], s_max=meta["s_max"], v=v, eta=eta)
