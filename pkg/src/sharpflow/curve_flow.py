"""Closed planar curves evolving by V = G kappa with G diagonal in Fourier modes.

A curve of length L sampled uniformly in arclength has Laplace-Beltrami
eigenvalues lam_k = (2 pi k / L)^2 with Fourier eigenfunctions, so the flow
law acts by multiplying the k-th Fourier coefficient of kappa by zeta(lam_k).

Conventions: points run counterclockwise, the interior is the u = -1 phase,
the unit normal nu points outward and kappa = -1/R on a circle of radius R.
With tangent angle theta, tau = (cos theta, sin theta), nu = (sin theta,
-cos theta) and kappa = -theta_s.

Time stepping works on the tangent-angle form: theta(alpha) = alpha +
phi(alpha) on alpha in [0, 2 pi) with arclength s = L alpha / (2 pi). A
tangential velocity T keeps the parametrization exactly uniform:

    theta_t = (2 pi / L) (T theta_alpha - V_alpha)
    T_alpha = L_t / (2 pi) - V theta_alpha,   L_t = int V theta_alpha d alpha

Since V = -(2 pi / L) G phi_alpha, the stiff part of phi_t is the diagonal
decay -lam_k zeta(lam_k) phi_k, which is integrated exactly by a
second-order exponential Runge-Kutta step (ETD2RK); only the tangential
term is explicit.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .symbols import FlowLaw

FILTER_TOL = 1e-13       # Fourier amplitudes of phi below this are roundoff
DISPLACEMENT_CFL = 0.01  # auto dt moves points at most this fraction of L/N
MAX_DISPLACEMENT = 0.5   # explicit dt beyond this fraction of L/N is rejected
DT_MAX = 2e-3
EQUILIBRIUM_TOL = 1e-10
PERIMETER_SLACK = 1e-10
UNIFORMITY_TOL = 1e-6


class CurveError(ValueError):
    """Invalid curve input."""


class StepRejected(ValueError):
    """A requested time step moves points too far."""


class FlowAbort(RuntimeError):
    """The run stopped on an invalid state; ``state`` holds the last good one."""

    def __init__(self, message, state=None, diagnostics=None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics


class UnderResolvedWarning(UserWarning):
    pass


# -- spectral helpers --------------------------------------------------------

def _wavenumbers(n):
    k = np.fft.fftfreq(n, 1.0 / n)
    ik = 1j * k
    ik[n // 2] = 0.0
    inv = np.zeros(n, dtype=complex)
    nz = k != 0
    inv[nz] = 1.0 / (1j * k[nz])
    inv[n // 2] = 0.0
    return k, ik, inv


def _deriv(z):
    _, ik, _ = _wavenumbers(z.size)
    return np.fft.ifft(ik * np.fft.fft(z))


def _as_complex(points):
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise CurveError("points must have shape (N, 2)")
    return p[:, 0] + 1j * p[:, 1]


def _as_points(z):
    return np.column_stack([z.real, z.imag])


def _area_perimeter(z):
    za = _deriv(z)
    area = 0.5 * float(np.mean(np.imag(np.conj(z) * za))) * 2.0 * math.pi
    perim = float(np.mean(np.abs(za))) * 2.0 * math.pi
    return area, perim


def segments_intersect(z, stride=1):
    """True when two non-adjacent edges of the closed polygon cross.

    Only every ``stride``-th vertex is used (a coarse test for smooth curves).
    """
    p = z[::stride]
    n = p.size
    if n < 4:
        return False
    a, b = p, np.roll(p, -1)
    d = b - a

    def cross(u, v):
        return u.real * v.imag - u.imag * v.real

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    o1 = cross(d[i], a[j] - a[i])
    o2 = cross(d[i], b[j] - a[i])
    o3 = cross(d[j], a[i] - a[j])
    o4 = cross(d[j], b[i] - a[j])
    return bool(np.any((o1 * o2 < 0) & (o3 * o4 < 0)))


def _coarse_stride(n, target=128):
    return max(1, n // target)


# -- states ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CurveState:
    """Closed curve sampled uniformly in arclength, counterclockwise."""

    points: np.ndarray
    t: float
    L: float
    A_enc: float

    @classmethod
    def from_points(cls, points, t=0.0, check=True):
        z = _as_complex(points)
        n = z.size
        if check:
            if n < 64 or n & (n - 1):
                raise CurveError("N must be a power of two and at least 64")
        area, perim = _area_perimeter(z)
        if check:
            if area <= 0:
                raise CurveError("curve must be counterclockwise (positive signed area)")
            speed = np.abs(_deriv(z))
            spread = float(np.ptp(speed) / np.mean(speed))
            if spread > UNIFORMITY_TOL:
                raise CurveError(f"samples are not uniform in arclength (spread {spread:.2e})")
            if segments_intersect(z, _coarse_stride(n)):
                raise CurveError("curve intersects itself")
        return cls(_as_points(z), float(t), perim, area)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def deficit(self):
        return self.L * self.L - 4.0 * math.pi * self.A_enc

    def translated(self, dx, dy):
        return CurveState(self.points + np.array([dx, dy]), self.t, self.L, self.A_enc)


def _trig_eval(coef, kvec, t):
    """Evaluate sum_k coef_k exp(i k t) at points t."""
    return np.exp(1j * np.outer(t, kvec)) @ coef


def reparametrize(points, n_out, t=0.0) -> CurveState:
    """Resample a closed curve uniformly in arclength.

    The input is read as samples of a periodic curve at equal parameter
    steps. Its trigonometric interpolant is integrated for arclength, which
    is inverted by Newton iteration at the targets j L / n_out.
    """
    z = _as_complex(points)
    m = z.size
    if m < 16:
        raise CurveError("need at least 16 input points")
    if segments_intersect(z, _coarse_stride(m, 512)):
        raise CurveError("input curve intersects itself")
    if _area_perimeter(z)[0] < 0:
        z = z[::-1]
    zh = np.fft.fft(z) / m
    k = np.fft.fftfreq(m, 1.0 / m)
    if m % 2 == 0:  # split the Nyquist mode evenly between +-m/2
        zh = np.append(zh, 0.5 * zh[m // 2])
        zh[m // 2] *= 0.5
        k = np.append(k, m // 2)
        k[m // 2] = -m // 2
    # speed on a fine grid by zero-padded FFT
    mf = 4 * int(2 ** math.ceil(math.log2(max(m, n_out, 64))))
    dz = 1j * k * zh
    pad = np.zeros(mf, dtype=complex)
    np.add.at(pad, k.astype(int) % mf, dz)
    speed = np.abs(np.fft.ifft(pad) * mf)
    # arclength = mean_speed * t + periodic part, integrated mode by mode
    raw = np.fft.rfft(speed)
    mean_speed = raw[0].real / mf
    L = 2.0 * math.pi * mean_speed
    kk = np.arange(raw.size)
    prim = np.zeros_like(raw)
    prim[1:-1] = raw[1:-1] / (1j * kk[1:-1])
    tf = 2.0 * math.pi * np.arange(mf) / mf
    periodic = np.fft.irfft(prim, mf)
    sf = mean_speed * tf + periodic - periodic[0]
    # truncated series for Newton at arbitrary parameters
    keep = np.abs(zh) > 1e-15 * np.abs(zh).max()
    zh, k, dz = zh[keep], k[keep], dz[keep]
    coef = 2.0 * prim / mf
    keep_s = np.abs(coef) > 1e-15 * mean_speed
    ks, cs = kk[keep_s], coef[keep_s]
    offset = float(np.real(np.sum(cs)))

    def arclength(tt):
        return mean_speed * tt + np.real(np.exp(1j * np.outer(tt, ks)) @ cs) - offset

    def speed_at(tt):
        return np.abs(_trig_eval(dz, k, tt))

    target = L * np.arange(n_out) / n_out
    tt = np.interp(target, np.append(sf, L), np.append(tf, 2.0 * math.pi))
    for _ in range(20):
        step = (arclength(tt) - target) / speed_at(tt)
        tt -= step
        if np.max(np.abs(step)) < 1e-15:
            break
    out = _trig_eval(zh, k, tt)
    return CurveState.from_points(_as_points(out), t)


# -- tangent-angle representation ------------------------------------------

def _phi1(z):
    out = np.empty_like(z)
    small = np.abs(z) < 1e-4
    zz = z[~small]
    out[~small] = -np.expm1(-zz) / zz
    s = z[small]
    out[small] = 1.0 - s / 2.0 + s * s / 6.0
    return out


def _phi2(z):
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zz = z[~small]
    out[~small] = (np.expm1(-zz) + zz) / (zz * zz)
    s = z[small]
    out[small] = 0.5 - s / 6.0 + s * s / 24.0
    return out


@dataclass
class _AngleForm:
    """phi_hat = rfft(theta - alpha), perimeter L and mean point c."""

    phi_hat: np.ndarray
    L: float
    center: complex
    t: float


class FlowStepper:
    """Owns the tangent-angle state of one simulation and advances it."""

    def __init__(self, state: CurveState, law: FlowLaw):
        n = state.n
        self.n = n
        self.law = law
        self.k = np.arange(n // 2 + 1, dtype=float)
        self.ik = 1j * self.k
        self.ik[-1] = 0.0
        self.inv_ik = np.zeros(n // 2 + 1, dtype=complex)
        self.inv_ik[1:-1] = 1.0 / self.ik[1:-1]
        self.alpha = 2.0 * math.pi * np.arange(n) / n
        _, self.ikc, self.inv_ikc = _wavenumbers(n)
        self.form = self._from_state(state)

    # conversions
    def _filter(self, ph):
        ph = ph.copy()
        small = np.abs(ph) < FILTER_TOL * self.n
        small[0] = False
        ph[small] = 0.0
        return ph

    def _from_state(self, state):
        z = _as_complex(state.points)
        za = np.fft.ifft(self.ikc * np.fft.fft(z))
        theta = np.unwrap(np.angle(za))
        theta += 2.0 * math.pi * round((self.alpha[0] - theta[0]) / (2.0 * math.pi))
        phi_hat = self._filter(np.fft.rfft(theta - self.alpha))
        return _AngleForm(phi_hat, state.L, complex(np.mean(z)), state.t)

    def points(self, form=None):
        f = form or self.form
        theta = self.alpha + np.fft.irfft(f.phi_hat, self.n)
        tau_hat = np.fft.fft(np.exp(1j * theta))
        rel = np.fft.ifft(tau_hat * self.inv_ikc) * (f.L / (2.0 * math.pi))
        return f.center + rel - np.mean(rel)

    def state(self):
        z = self.points()
        area, _ = _area_perimeter(z)
        return CurveState(_as_points(z), self.form.t, self.form.L, area)

    # dynamics
    def lambdas(self, L):
        return (2.0 * math.pi * self.k / L) ** 2

    def kappa(self, form=None):
        f = form or self.form
        theta_a = 1.0 + np.fft.irfft(self.ik * f.phi_hat, self.n)
        return -(2.0 * math.pi / f.L) * theta_a

    def velocity(self, phi_hat, L):
        theta_a = 1.0 + np.fft.irfft(self.ik * phi_hat, self.n)
        kap_hat = np.fft.rfft(-(2.0 * math.pi / L) * theta_a)
        kap_hat[0] = 0.0
        return np.fft.irfft(self.law(self.lambdas(L)) * kap_hat, self.n), theta_a

    def _rhs(self, phi_hat, L):
        V, theta_a = self.velocity(phi_hat, L)
        vt = V * theta_a
        L_t = 2.0 * math.pi * float(np.mean(vt))
        T = np.fft.irfft(np.fft.rfft(np.mean(vt) - vt) * self.inv_ik, self.n)
        nonlin = np.fft.rfft((2.0 * math.pi / L) * T * theta_a)
        nonlin[-1] = 0.0
        theta = self.alpha + np.fft.irfft(phi_hat, self.n)
        tau = np.exp(1j * theta)
        c_t = complex(np.mean(V * (-1j * tau) + T * tau))
        return nonlin, L_t, c_t, V

    def max_speed(self):
        V, _ = self.velocity(self.form.phi_hat, self.form.L)
        return float(np.max(np.abs(V)))

    def auto_dt(self, dt_max=DT_MAX):
        vmax = self.max_speed()
        cap = DISPLACEMENT_CFL * (self.form.L / self.n) / vmax if vmax > 0 else math.inf
        return min(dt_max, cap)

    def advance(self, dt, enforce_area=False):
        """One ETD2RK step of size dt."""
        f = self.form
        vmax = self.max_speed()
        if vmax * dt > MAX_DISPLACEMENT * f.L / self.n:
            raise StepRejected(f"dt={dt:g} moves points {vmax * dt / (f.L / self.n):.3g} "
                               f"spacings (limit {MAX_DISPLACEMENT})")
        area0 = self._area(f) if enforce_area else None
        n0, lt0, ct0, _ = self._rhs(f.phi_hat, f.L)
        L_a = f.L + dt * lt0
        lam = self.lambdas(0.5 * (f.L + L_a))
        z = lam * self.law(lam) * dt
        e = np.exp(-z)
        a = e * f.phi_hat + dt * _phi1(z) * n0
        n1, lt1, ct1, _ = self._rhs(a, L_a)
        phi_new = self._filter(a + dt * _phi2(z) * (n1 - n0))
        new = _AngleForm(phi_new, f.L + 0.5 * dt * (lt0 + lt1),
                         f.center + 0.5 * dt * (ct0 + ct1), f.t + dt)
        if enforce_area:
            # uniform dilation about the mean point restores the area exactly
            new.L *= math.sqrt(area0 / self._area(new))
        self.form = new
        return new

    def _area(self, form):
        return _area_perimeter(self.points(form))[0]


# -- public operations -------------------------------------------------------

def curvature(state: CurveState, warn=True):
    """kappa at the nodes (circle of radius R gives -1/R)."""
    kap = FlowStepper(state, law=None).kappa()
    if warn:
        spec = np.abs(np.fft.rfft(kap - kap.mean())) ** 2
        top = spec[2 * spec.size // 3:].sum()
        if spec.sum() > 0 and top > 0.01 * spec.sum():
            warnings.warn("curvature spectrum is under-resolved", UnderResolvedWarning,
                          stacklevel=2)
    return kap


def normal_velocity(state: CurveState, law: FlowLaw):
    """V = G kappa: Fourier mode k of kappa times zeta((2 pi k / L)^2)."""
    st = FlowStepper(state, law)
    V, _ = st.velocity(st.form.phi_hat, st.form.L)
    return V


def step(state: CurveState, law: FlowLaw, dt="auto", enforce_area=False) -> CurveState:
    """Advance one time step; ``dt="auto"`` picks a displacement-limited step."""
    st = FlowStepper(state, law)
    h = st.auto_dt() if dt == "auto" else float(dt)
    if not h > 0:
        raise StepRejected("dt must be positive")
    st.advance(h, enforce_area)
    out = st.state()
    if segments_intersect(_as_complex(out.points), _coarse_stride(out.n)):
        raise FlowAbort("curve intersects itself after the step", state)
    return out


@dataclass
class StepRecord:
    step: int
    t: float
    area: float
    perimeter: float
    deficit: float
    max_kappa_dev: float
    max_v: float
    dt: float


@dataclass
class FlowDiagnostics:
    records: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    equilibrium_step: Optional[int] = None
    perimeter_violations: int = 0
    aborted: Optional[str] = None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t", "area", "perimeter", "deficit", "max_kappa_dev",
                        "max_v", "dt"])
            for r in self.records:
                w.writerow([r.step, repr(r.t), repr(r.area), repr(r.perimeter),
                            repr(r.deficit), repr(r.max_kappa_dev), repr(r.max_v), repr(r.dt)])

    @property
    def area_drift(self):
        a0 = self.records[0].area
        return max(abs(r.area - a0) for r in self.records) / abs(a0)

    @property
    def terminal_kappa_dev(self):
        """max |kappa - mean kappa| / |mean kappa| of the last record."""
        r = self.records[-1]
        return r.max_kappa_dev * r.perimeter / (2.0 * math.pi)

    def frame_deficits(self):
        return [f[1] for f in self.frames]

    def report(self):
        d = self.frame_deficits()
        decreasing = all(b < a for a, b in zip(d, d[1:]))
        return {
            "area_drift": self.area_drift,
            "perimeter_violations": self.perimeter_violations,
            "deficit_strictly_decreasing": decreasing,
            "deficit_initial": d[0] if d else None,
            "deficit_final": d[-1] if d else None,
            "terminal_kappa_dev": self.terminal_kappa_dev,
            "stopped_at_equilibrium": self.equilibrium_step is not None,
            "equilibrium": self.equilibrium_step is not None or self.terminal_kappa_dev <= 1e-3,
            "steps": self.records[-1].step,
            "t_final": self.records[-1].t,
            "aborted": self.aborted,
        }


def _record(stepper, step_no, dt):
    f = stepper.form
    z = stepper.points()
    area, _ = _area_perimeter(z)
    kap = stepper.kappa()
    vmax = stepper.max_speed()
    return StepRecord(step_no, f.t, area, f.L, f.L * f.L - 4.0 * math.pi * area,
                      float(np.max(np.abs(kap - kap.mean()))), vmax, dt)


def run(initial: CurveState, law: FlowLaw, t_end, frame_count,
        sink: Optional[Callable] = None, dt="auto", enforce_area=False,
        dt_max=DT_MAX) -> FlowDiagnostics:
    """Advance to ``t_end`` emitting ``frame_count`` frames after the initial one.

    ``sink(index, state)`` receives every frame. The run stops early once
    max|V| L / sigma < 1e-10. On a self-intersection or rejected step a
    FlowAbort carries the last good state and the partial diagnostics.
    """
    if frame_count < 1:
        raise ValueError("frame_count must be at least 1")
    stepper = FlowStepper(initial, law)
    law.prepare(stepper.lambdas(initial.L)[1] * 0.25, stepper.lambdas(initial.L)[-1] * 4.0)
    sigma = law.constants.sigma
    diag = FlowDiagnostics()
    frame_times = [t_end * j / frame_count for j in range(1, frame_count + 1)]

    def emit(index):
        st = stepper.state()
        diag.frames.append((st.t, st.deficit))
        if sink is not None:
            sink(index, st)

    rec = _record(stepper, 0, 0.0)
    diag.records.append(rec)
    emit(0)
    if rec.max_v * rec.perimeter / sigma < EQUILIBRIUM_TOL:
        diag.equilibrium_step = 0
        return diag
    step_no = 0
    frame = 0
    while frame < frame_count:
        t_next = frame_times[frame]
        h = stepper.auto_dt(dt_max) if dt == "auto" else float(dt)
        h = min(h, t_next - stepper.form.t)
        last_good = stepper.form
        L_prev = stepper.form.L
        try:
            stepper.advance(h, enforce_area)
        except StepRejected as exc:
            diag.aborted = str(exc)
            raise FlowAbort(str(exc), stepper.state(), diag) from exc
        step_no += 1
        if stepper.form.L > L_prev * (1.0 + PERIMETER_SLACK):
            diag.perimeter_violations += 1
        z = stepper.points()
        if segments_intersect(z, _coarse_stride(stepper.n)):
            stepper.form = last_good
            diag.aborted = f"self-intersection at step {step_no}"
            raise FlowAbort(diag.aborted, stepper.state(), diag)
        rec = _record(stepper, step_no, h)
        diag.records.append(rec)
        if stepper.form.t >= t_next * (1 - 1e-12) or t_next - stepper.form.t < 1e-14:
            stepper.form.t = t_next
            rec.t = t_next
            frame += 1
            emit(frame)
        if rec.max_v * rec.perimeter / sigma < EQUILIBRIUM_TOL:
            diag.equilibrium_step = step_no
            if diag.frames[-1][0] != stepper.form.t:
                emit(frame + 1)
            break
    return diag


# -- shapes and outputs ------------------------------------------------------

def shape_points(spec, samples=4096):
    """Sample "circle:R", "ellipse:a,b" or "fourier:k,re,im,..." on a parameter grid.

    The Fourier form is z(t) = sum (re + i im) exp(i k t).
    """
    try:
        kind, _, args = spec.partition(":")
        vals = [float(v) for v in args.split(",")] if args else []
    except ValueError as exc:
        raise CurveError(f"cannot parse shape {spec!r}") from exc
    t = 2.0 * math.pi * np.arange(samples) / samples
    if kind == "circle" and len(vals) == 1 and vals[0] > 0:
        z = vals[0] * np.exp(1j * t)
    elif kind == "ellipse" and len(vals) == 2 and min(vals) > 0:
        z = vals[0] * np.cos(t) + 1j * vals[1] * np.sin(t)
    elif kind == "fourier" and vals and len(vals) % 3 == 0:
        z = np.zeros(samples, dtype=complex)
        for kk, re, im in zip(vals[0::3], vals[1::3], vals[2::3]):
            if kk != int(kk):
                raise CurveError("Fourier wavenumbers must be integers")
            z += (re + 1j * im) * np.exp(1j * int(kk) * t)
    else:
        raise CurveError(f"unsupported shape {spec!r}")
    return _as_points(z)


def perturbed_circle(n, radius=1.0, amplitude=0.01, mode=2):
    """r(theta) = radius + amplitude cos(mode theta), resampled in arclength."""
    t = 2.0 * math.pi * np.arange(4 * n) / (4 * n)
    r = radius + amplitude * np.cos(mode * t)
    return reparametrize(_as_points(r * np.exp(1j * t)), n)


def mode_amplitude(stepper_or_state, mode):
    """|Fourier coefficient| of kappa over arclength for one mode."""
    kap = stepper_or_state.kappa() if isinstance(stepper_or_state, FlowStepper) \
        else curvature(stepper_or_state, warn=False)
    return float(np.abs(np.fft.rfft(kap)[mode]) / kap.size)


def measure_decay_rate(law: FlowLaw, mode=2, amplitude=0.01, radius=1.0, n=128, frames=20):
    """Fit the exponential decay rate of one curvature mode of a perturbed circle.

    The predicted linear rate is (m^2 - 1) zeta(m^2/R^2) / R^2; the run spans
    about two e-foldings of that rate.
    """
    predicted = (mode * mode - 1) * law(mode * mode / radius ** 2) / radius ** 2
    state = perturbed_circle(n, radius, amplitude, mode)
    stepper = FlowStepper(state, law)
    law.prepare(stepper.lambdas(state.L)[1] * 0.25, stepper.lambdas(state.L)[-1] * 4.0)
    t_end = 2.0 / predicted
    ts, amps = [0.0], [mode_amplitude(stepper, mode)]
    for j in range(1, frames + 1):
        target = t_end * j / frames
        while stepper.form.t < target - 1e-14:
            stepper.advance(min(stepper.auto_dt(), target - stepper.form.t))
        ts.append(stepper.form.t)
        amps.append(mode_amplitude(stepper, mode))
    rate = -float(np.polyfit(ts, np.log(amps), 1)[0])
    return rate, float(predicted)


def write_frame(state: CurveState, directory, index, svg=True):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = {"t": state.t, "points": state.points.tolist(), "area": state.A_enc,
            "perimeter": state.L}
    (directory / f"frame_{index:04d}.json").write_text(json.dumps(data) + "\n")
    if svg:
        (directory / f"frame_{index:04d}.svg").write_text(frame_svg(state))


def frame_svg(state: CurveState):
    """Closed path in a viewBox scaled to the curve's bounding box (y up)."""
    p = state.points
    lo, hi = p.min(axis=0), p.max(axis=0)
    size = float(max(hi - lo)) or 1.0
    q = (p - lo) / size
    q[:, 1] = 1.0 - q[:, 1] - (1.0 - (hi[1] - lo[1]) / size)
    path = "M " + " L ".join(f"{x:.6f} {y:.6f}" for x, y in q) + " Z"
    return ('<svg xmlns="http://www.w3.org/2000/svg" viewBox="-0.05 -0.05 1.1 1.1">'
            f'<path d="{path}" fill="none" stroke="black" stroke-width="0.004"/></svg>\n')
