"""Relative phase of the two oscillators on a periodic orbit.

The observable-dependent proto-phase is the argument of the analytic signal
of one exactly periodic block of samples (frequency-domain construction:
negative frequencies zeroed, positive doubled — no windowing or padding is
needed because the block is exactly one period).  The proto-phase is then
mapped to an observable-independent phase that grows uniformly in time via
its cycle-averaged Fourier coefficients::

    phi = theta + sum_n  2 * Re[ (S_n / (i n)) * (exp(i n theta) - 1) ],
    S_n = <exp(-i n theta(t))>_cycle

so that ``phi(t) = 2*pi*t/T + const`` up to the truncation order.  The
relative phase of an orbit is the (circular) mean of ``phi1 - phi2``.

A marker-based oracle (time from a maximum of x1 to the next maximum of x2)
provides an independent cross-check for orbits with one maximum per period.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateSignalError", "HarmonicOverflowError", "MultipleMaximaError",
    "PhaseProfile", "proto_phase", "uniform_phase", "relative_phase",
    "marker_phase_oracle",
]


class DegenerateSignalError(ValueError):
    """Observable has no oscillation (amplitude below threshold)."""


class HarmonicOverflowError(ValueError):
    """Requested more transformation harmonics than the samples support."""


class MultipleMaximaError(RuntimeError):
    """Marker oracle inapplicable: several maxima per period."""


@dataclass
class PhaseProfile:
    """Relative phase of an orbit, in degrees in [0, 360)."""

    phi_rel: float
    complement: float        # 360 - phi_rel: the opposite sign convention
    offsets: tuple           # per-oscillator uniform-phase offsets (degrees)
    n_harmonics: int
    n_samples: int
    observable: str = "x"
    residual: float = 0.0    # max deviation of phi1 - phi2 from its mean (deg)


def proto_phase(samples: np.ndarray) -> np.ndarray:
    """Unwrapped analytic-signal angle of one exactly periodic block.

    ``samples`` must cover exactly one period on a uniform grid (endpoint
    exclusive) with at least 256 points; the mean is removed internally.
    Returns an angle series in radians that gains 2*pi over the period.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("proto_phase expects a 1-d sample block")
    n = len(x)
    if n < 256:
        raise ValueError(f"need at least 256 samples, got {n}")
    x = x - x.mean()
    amp = np.max(np.abs(x))
    if amp < 1e-12:
        raise DegenerateSignalError(f"oscillation amplitude {amp:.2e}")
    X = np.fft.fft(x)
    H = np.zeros(n)
    H[0] = 1.0
    if n % 2 == 0:
        H[n // 2] = 1.0
        H[1:n // 2] = 2.0
    else:
        H[1:(n + 1) // 2] = 2.0
    z = np.fft.ifft(X * H)
    return np.unwrap(np.angle(z))


def uniform_phase(theta: np.ndarray, n_harmonics: int = 24) -> np.ndarray:
    """Map a proto-phase series (one full cycle, uniform time grid) to a
    phase that grows uniformly in time, rescaled to gain exactly 2*pi."""
    theta = np.asarray(theta, dtype=float)
    n = len(theta)
    if n_harmonics > n // 4:
        raise HarmonicOverflowError(
            f"{n_harmonics} harmonics exceed n_samples/4 = {n // 4}")
    phi = theta.astype(float).copy()
    for k in range(1, n_harmonics + 1):
        S = np.mean(np.exp(-1j * k * theta))
        phi += 2.0 * np.real(S / (1j * k) * (np.exp(1j * k * theta) - 1.0))
    # exact 2*pi growth over the cycle (theta itself gains 2*pi only up to
    # discretization)
    total = phi[-1] + (phi[-1] - phi[-2]) - phi[0]
    if total != 0:
        phi = phi[0] + (phi - phi[0]) * (2 * np.pi / total)
    return phi


def _orbit_samples(orbit, n_samples: int, observable: str):
    s = np.arange(n_samples) / n_samples
    u = orbit.evaluate(s)
    if observable == "x":
        return u[:, 0], u[:, 1]
    if observable == "y":
        return u[:, 2], u[:, 3]
    raise ValueError(f"unknown observable {observable!r} (use 'x' or 'y')")


def relative_phase(orbit, n_samples: int = 1024, n_harmonics: int = 24,
                   observable: str = "x") -> PhaseProfile:
    """Relative phase ``phi1 - phi2`` of a converged full-system orbit,
    in degrees in [0, 360), with the complementary convention recorded."""
    a1, a2 = _orbit_samples(orbit, n_samples, observable)
    phis = []
    offsets = []
    for sig in (a1, a2):
        th = proto_phase(sig)
        ph = uniform_phase(th, n_harmonics=n_harmonics)
        phis.append(ph)
        offsets.append(np.degrees(ph[0]) % 360.0)
    diff = phis[0] - phis[1]
    mean = np.angle(np.mean(np.exp(1j * diff)))
    resid = np.max(np.abs(np.angle(np.exp(1j * (diff - mean)))))
    phi_rel = float(np.degrees(mean) % 360.0)
    return PhaseProfile(phi_rel=phi_rel,
                        complement=(360.0 - phi_rel) % 360.0,
                        offsets=(float(offsets[0]), float(offsets[1])),
                        n_harmonics=n_harmonics, n_samples=n_samples,
                        observable=observable,
                        residual=float(np.degrees(resid)))


def _maxima_positions(vals: np.ndarray, prominence_frac: float = 1e-3):
    """Indices of local maxima of a periodic sample block, ignoring wiggles
    below ``prominence_frac`` of the peak-to-peak range."""
    n = len(vals)
    rng = np.max(vals) - np.min(vals)
    prev = np.roll(vals, 1)
    nxt = np.roll(vals, -1)
    cand = np.nonzero((vals >= prev) & (vals > nxt))[0]
    # prominence: drop maxima whose height above the deeper adjacent trough
    # is below threshold
    keep = []
    for i in cand:
        j = i
        left_min = vals[i]
        for _ in range(n):
            j = (j - 1) % n
            left_min = min(left_min, vals[j])
            if vals[j] > vals[i]:
                break
        j = i
        right_min = vals[i]
        for _ in range(n):
            j = (j + 1) % n
            right_min = min(right_min, vals[j])
            if vals[j] > vals[i]:
                break
        if vals[i] - max(left_min, right_min) >= prominence_frac * rng:
            keep.append(i)
    return keep


def marker_phase_oracle(orbit, n_samples: int = 4096,
                        prominence_frac: float = 1e-3) -> float:
    """Relative phase from event markers: 360 * dt / T where dt is the time
    from a maximum of x1 to the next maximum of x2.

    Raises :class:`MultipleMaximaError` for orbits with several maxima per
    period (where the marker has no unique meaning).
    """
    s = np.arange(n_samples) / n_samples
    u = orbit.evaluate(s)
    x1, x2 = u[:, 0], u[:, 1]
    m1 = _maxima_positions(x1, prominence_frac)
    m2 = _maxima_positions(x2, prominence_frac)
    if len(m1) != 1 or len(m2) != 1:
        raise MultipleMaximaError(
            f"{len(m1)} maxima of x1 and {len(m2)} of x2 per period")

    def refine(vals, i):
        # parabola through the three samples around the discrete maximum
        y0, y1, y2 = vals[(i - 1) % n_samples], vals[i], vals[(i + 1) % n_samples]
        denom = y0 - 2 * y1 + y2
        return i + (0.5 * (y0 - y2) / denom if denom != 0 else 0.0)

    t1 = refine(x1, m1[0])
    t2 = refine(x2, m2[0])
    dt = (t2 - t1) % n_samples
    return float(360.0 * dt / n_samples)
