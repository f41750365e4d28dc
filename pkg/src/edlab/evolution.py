"""Grid evolution of the (rho, Phi) pair under the ensemble Hamiltonian.

Fields live on a periodic 1-D grid.  The ensemble Hamiltonian

    H[rho, Phi] = int 1/2 rho (Phi')^2 / m + rho V + xi (rho')^2 / (m rho) dx

is evaluated through the identity 1/2 rho (Phi')^2/m + xi (rho')^2/(m rho)
= hbar^2/(2m) |Psi'|^2 with Psi = sqrt(rho) exp(i Phi/hbar) and
hbar^2 = 8 xi.  That form avoids dividing by rho and stays well defined when
Phi is not periodic (a momentum kick, a spreading packet's chirp).  The
discrete Laplacian is the 4th-order central stencil; the Hamilton equations
drho/dt = dH/dPhi, dPhi/dt = -dH/drho use the exact gradients of that
discrete H, so the stepper conserves the same H that ``ensemble_hamiltonian``
reports.

The split-step Fourier propagator in ``schrodinger_step`` is the independent
reference that ``evolve_compare`` checks the (rho, Phi) flow against.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_complex_vector, as_finite_vector, check_positive

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-12
STABILITY_CONSTANT = 0.25
NEGATIVE_DENSITY_TOLERANCE = 1e-6
NORMALIZATION_TOLERANCE = 1e-9
METHODS = ("rk4", "symplectic_euler")


class GridMismatchError(ValueError):
    pass


class StabilityError(ValueError):
    pass


class NodeError(ValueError):
    """The density vanishes (falls below the floor) somewhere on the grid."""


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 8, got {n!r}")
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)) or self.x_max <= self.x_min:
            raise ValueError(f"need finite x_max > x_min, got [{self.x_min}, {self.x_max}]")

    @property
    def length(self):
        return self.x_max - self.x_min

    @property
    def dx(self):
        return self.length / self.n_points

    @property
    def x(self):
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def wavenumbers(self):
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, self.dx)


def _same_grid(*fields):
    first = fields[0].grid
    for f in fields[1:]:
        if f.grid != first:
            raise GridMismatchError(f"fields live on different grids: {first} vs {f.grid}")
    return first


@dataclass(frozen=True)
class DensityField:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = as_finite_vector(self.values, "density", length=self.grid.n_points)
        if np.any(values < 0):
            raise ValueError(f"density is negative at nodes {np.flatnonzero(values < 0).tolist()}")
        norm = values.sum() * self.grid.dx
        if abs(norm - 1.0) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"density integrates to {norm!r}, expected 1")
        low = np.flatnonzero(values < DENSITY_FLOOR * values.max() * (1 - 1e-9))
        if low.size:
            raise NodeError(f"density below floor at nodes {low.tolist()}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, grid, values):
        """Floor at 1e-12 * max and normalise; floored nodes are logged."""
        values = as_finite_vector(values, "density", length=grid.n_points)
        if values.max() <= 0:
            raise ValueError("density has no positive mass")
        floored, n_floored = floor_density(values)
        if n_floored:
            logger.debug("density floor applied at %d nodes", n_floored)
        return cls(grid, floored / (floored.sum() * grid.dx))

    def mean(self):
        return float(np.sum(self.grid.x * self.values) * self.grid.dx)

    def width(self):
        x = self.grid.x
        m = self.mean()
        return float(np.sqrt(np.sum((x - m) ** 2 * self.values) * self.grid.dx))


@dataclass(frozen=True)
class PhaseField:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = as_finite_vector(self.values, "phase", length=self.grid.n_points)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class WaveField:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = as_complex_vector(self.values, "wavefunction")
        if values.shape[0] != self.grid.n_points:
            raise ValueError(f"wavefunction has {values.shape[0]} points, grid has {self.grid.n_points}")
        norm = np.sum(np.abs(values) ** 2) * self.grid.dx
        if abs(norm - 1.0) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"wavefunction norm is {norm!r}, expected 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def normalized(cls, grid, values):
        values = np.asarray(values, dtype=complex)
        return cls(grid, values / np.sqrt(np.sum(np.abs(values) ** 2) * grid.dx))

    def density(self):
        return np.abs(self.values) ** 2


@dataclass(frozen=True)
class HamiltonianSpec:
    """Mass, potential samples and the quantum-potential strength xi.

    hbar is derived as sqrt(8 xi); the default xi = 1/8 gives hbar = 1.
    """

    mass: float
    potential: np.ndarray
    xi: float = 0.125

    def __post_init__(self):
        object.__setattr__(self, "mass", check_positive(self.mass, "mass"))
        object.__setattr__(self, "xi", check_positive(self.xi, "xi"))
        pot = as_finite_vector(self.potential, "potential")
        pot.setflags(write=False)
        object.__setattr__(self, "potential", pot)

    @classmethod
    def with_hbar(cls, mass, potential, hbar=1.0):
        hbar = check_positive(hbar, "hbar")
        return cls(mass, potential, hbar * hbar / 8.0)

    @classmethod
    def free(cls, grid, mass=1.0, hbar=1.0):
        return cls.with_hbar(mass, np.zeros(grid.n_points), hbar)

    @property
    def hbar(self):
        return float(np.sqrt(8.0 * self.xi))

    def check_grid(self, grid):
        if self.potential.shape[0] != grid.n_points:
            raise GridMismatchError(
                f"potential has {self.potential.shape[0]} samples, grid has {grid.n_points}"
            )


def floor_density(values):
    eps = DENSITY_FLOOR * values.max()
    low = values < eps
    return np.where(low, eps, values), int(low.sum())


def stability_bound(grid, spec):
    """Largest admissible hamilton_step: C * m * dx^2 / hbar with C = 0.25."""
    return STABILITY_CONSTANT * spec.mass * grid.dx**2 / spec.hbar


def spectral_derivative(values, grid):
    """First derivative of periodic samples by FFT (Nyquist mode dropped)."""
    k = grid.wavenumbers.copy()
    if grid.n_points % 2 == 0:
        k[grid.n_points // 2] = 0.0
    return np.fft.ifft(1j * k * np.fft.fft(values))


def laplacian(values, dx):
    """4th-order central second difference on a periodic grid."""
    f = values
    return (
        -2.5 * f
        + (4.0 / 3.0) * (np.roll(f, 1) + np.roll(f, -1))
        - (1.0 / 12.0) * (np.roll(f, 2) + np.roll(f, -2))
    ) / dx**2


def current_velocity(phi, spec):
    """Probability-flow velocity v = (1/m) dPhi/dx.

    The gradient is taken spectrally on the unit phasor exp(i Phi/hbar), so a
    phase that winds by multiples of 2*pi*hbar across the box (a plane wave)
    is differentiated exactly.
    """
    grid = phi.grid
    spec.check_grid(grid)
    u = np.exp(1j * phi.values / spec.hbar)
    return spec.hbar * np.imag(np.conj(u) * spectral_derivative(u, grid)) / spec.mass


def _psi(rho, phi, hbar):
    return np.sqrt(rho) * np.exp(1j * phi / hbar)


def _h_psi(psi, spec, dx):
    return -(spec.hbar**2 / (2.0 * spec.mass)) * laplacian(psi, dx) + spec.potential * psi


def _check_floor(rho_values, grid):
    low = np.flatnonzero(rho_values < DENSITY_FLOOR * rho_values.max() * (1 - 1e-9))
    if low.size:
        raise NodeError(
            f"density below floor at nodes {low.tolist()[:10]} (x = {grid.x[low[:10]].round(6).tolist()})"
        )


def ensemble_hamiltonian(rho, phi, spec):
    grid = _same_grid(rho, phi)
    spec.check_grid(grid)
    _check_floor(rho.values, grid)
    psi = _psi(rho.values, phi.values, spec.hbar)
    gradient_terms = np.real(np.vdot(psi, -(spec.hbar**2 / (2.0 * spec.mass)) * laplacian(psi, grid.dx)))
    return float((gradient_terms + np.sum(spec.potential * rho.values)) * grid.dx)


def hamiltonian_gradients(rho_values, phi_values, spec, dx):
    """(dH/drho, dH/dPhi) per node, divided by dx."""
    psi = _psi(rho_values, phi_values, spec.hbar)
    hpsi = _h_psi(psi, spec, dx)
    d_rho = np.real(hpsi / psi)
    d_phi = (2.0 / spec.hbar) * np.imag(np.conj(psi) * hpsi)
    return d_rho, d_phi


@dataclass
class StepStats:
    norm_before: float
    renormalization: float
    floored_nodes: int
    min_density: float


def _rk4(rho, phi, spec, dt, dx):
    def rates(r, p):
        r, _ = floor_density(r)
        d_rho, d_phi = hamiltonian_gradients(r, p, spec, dx)
        return d_phi, -d_rho

    k1r, k1p = rates(rho, phi)
    k2r, k2p = rates(rho + 0.5 * dt * k1r, phi + 0.5 * dt * k1p)
    k3r, k3p = rates(rho + 0.5 * dt * k2r, phi + 0.5 * dt * k2p)
    k4r, k4p = rates(rho + dt * k3r, phi + dt * k3p)
    rho = rho + dt / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
    phi = phi + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return rho, phi


def _symplectic_euler(rho, phi, spec, dt, dx):
    d_rho, _ = hamiltonian_gradients(rho, phi, spec, dx)
    phi = phi - dt * d_rho
    _, d_phi = hamiltonian_gradients(rho, phi, spec, dx)
    return rho + dt * d_phi, phi


def hamilton_step(rho, phi, spec, dt, method="rk4", return_stats=False):
    """Advance (rho, Phi) by one step of the Hamilton equations.

    ``method="rk4"`` (default) is classical Runge-Kutta on the pair;
    ``method="symplectic_euler"`` updates Phi from rho and then rho from the
    new Phi.  The new density is floored and renormalised; the pre-renormalisation
    norm is logged at DEBUG level and returned in ``StepStats`` when
    ``return_stats`` is true.
    """
    grid = _same_grid(rho, phi)
    spec.check_grid(grid)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    bound = stability_bound(grid, spec)
    if dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.6g} exceeds the stability bound {bound:.6g}")

    stepper = _rk4 if method == "rk4" else _symplectic_euler
    r, p = stepper(rho.values, phi.values, spec, dt, grid.dx)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
        raise StabilityError("non-finite field values after step")
    min_density = float(r.min())
    if min_density < -NEGATIVE_DENSITY_TOLERANCE * r.max():
        node = int(np.argmin(r))
        raise StabilityError(
            f"density went negative ({min_density:.3e}) at node {node}, x={grid.x[node]:.6g}"
        )
    norm_before = float(r.sum() * grid.dx)
    r, n_floored = floor_density(r)
    r = r / (r.sum() * grid.dx)
    logger.debug(
        "hamilton_step: norm before renormalisation %.3e off unity, %d nodes floored",
        norm_before - 1.0,
        n_floored,
    )
    out = (DensityField(grid, r), PhaseField(grid, p))
    if return_stats:
        return out + (StepStats(norm_before, norm_before - 1.0, n_floored, min_density),)
    return out


def to_wavefunction(rho, phi, spec):
    grid = _same_grid(rho, phi)
    return WaveField(grid, _psi(rho.values, phi.values, spec.hbar))


def from_wavefunction(psi, spec):
    """Split Psi into (rho, Phi); Phi is hbar * arg(Psi) unwrapped from the left edge."""
    grid = psi.grid
    rho = np.abs(psi.values) ** 2
    nodes = np.flatnonzero(rho < DENSITY_FLOOR * rho.max() * (1 - 1e-6))
    if nodes.size:
        raise NodeError(f"wavefunction has nodes at x = {grid.x[nodes].round(6).tolist()}")
    phase = spec.hbar * np.unwrap(np.angle(psi.values))
    return DensityField.from_values(grid, rho), PhaseField(grid, phase)


def schrodinger_step(psi, spec, dt):
    """Strang split-step Fourier step: half potential, full kinetic, half potential."""
    grid = psi.grid
    spec.check_grid(grid)
    if not np.isfinite(dt) or dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt!r}")
    if dt == 0:
        return psi
    hbar, m = spec.hbar, spec.mass
    half = np.exp(-0.5j * spec.potential * dt / hbar)
    kinetic = np.exp(-0.5j * hbar * grid.wavenumbers**2 * dt / m)
    values = half * np.fft.ifft(kinetic * np.fft.fft(half * psi.values))
    return WaveField(grid, values)


def align_global_phase(psi, reference):
    """Rotate ``psi`` by the global phase maximising |<psi|reference>|."""
    overlap = np.vdot(psi, reference)
    if abs(overlap) == 0:
        return psi
    return psi * (overlap / abs(overlap))


@dataclass
class CompareReport:
    times: list
    l2_distance: list
    linf_distance: list
    density_l2: list
    width_ed: list
    width_reference: list
    norm_drift_ed: float
    norm_drift_reference: float
    energy_drift: float
    method: str
    dt: float
    n_steps: int
    final_ed: tuple = field(repr=False, default=None)
    final_reference: WaveField = field(repr=False, default=None)

    def to_dict(self):
        return {
            "schema": 1,
            "method": self.method,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "times": list(self.times),
            "l2_distance": list(self.l2_distance),
            "linf_distance": list(self.linf_distance),
            "density_l2": list(self.density_l2),
            "width_ed": list(self.width_ed),
            "width_reference": list(self.width_reference),
            "norm_drift_ed": self.norm_drift_ed,
            "norm_drift_reference": self.norm_drift_reference,
            "energy_drift": self.energy_drift,
        }


def _distances(ed, ref, dx):
    aligned = align_global_phase(ed, ref)
    diff = aligned - ref
    ref_norm = np.sqrt(np.sum(np.abs(ref) ** 2) * dx)
    l2 = float(np.sqrt(np.sum(np.abs(diff) ** 2) * dx) / ref_norm)
    linf = float(np.max(np.abs(diff)))
    dens = float(np.sqrt(np.sum((np.abs(ed) ** 2 - np.abs(ref) ** 2) ** 2) * dx))
    return l2, linf, dens


def evolve_compare(rho0, phi0, spec, T, dt, method="rk4", n_outputs=10):
    """Evolve (rho, Phi) and the split-step reference side by side.

    ``dt`` is shrunk so that an integer number of steps lands on ``T``.
    Distances are phase-aligned relative L2 and absolute L-infinity between
    the reconstructed and reference wavefunctions at ``n_outputs`` + 1
    evenly spaced times.  ``norm_drift_ed`` is the largest pre-renormalisation
    norm defect of any step; ``energy_drift`` the largest relative change of
    the ensemble Hamiltonian.
    """
    grid = _same_grid(rho0, phi0)
    spec.check_grid(grid)
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    n_steps = int(np.ceil(T / dt - 1e-9)) if T > 0 else 0
    step_dt = T / n_steps if n_steps else dt
    psi_ref = to_wavefunction(rho0, phi0, spec)
    rho, phi = rho0, phi0
    energy0 = ensemble_hamiltonian(rho, phi, spec)
    outputs = set(np.unique(np.round(np.linspace(0, n_steps, n_outputs + 1)).astype(int)).tolist())

    times, l2s, linfs, dens, w_ed, w_ref = [], [], [], [], [], []
    norm_drift = 0.0
    energy_drift = 0.0
    ref_norm_drift = 0.0

    def record(i):
        ed = to_wavefunction(rho, phi, spec).values
        l2, linf, d = _distances(ed, psi_ref.values, grid.dx)
        times.append(i * step_dt)
        l2s.append(l2)
        linfs.append(linf)
        dens.append(d)
        w_ed.append(rho.width())
        w_ref.append(DensityField.from_values(grid, psi_ref.density()).width())

    record(0)
    for i in range(1, n_steps + 1):
        rho, phi, stats = hamilton_step(rho, phi, spec, step_dt, method=method, return_stats=True)
        norm_drift = max(norm_drift, abs(stats.renormalization))
        before = np.sum(np.abs(psi_ref.values) ** 2) * grid.dx
        psi_ref = schrodinger_step(psi_ref, spec, step_dt)
        ref_norm_drift = max(ref_norm_drift, abs(np.sum(psi_ref.density()) * grid.dx - before))
        if i in outputs:
            energy = ensemble_hamiltonian(rho, phi, spec)
            energy_drift = max(energy_drift, abs(energy - energy0) / max(abs(energy0), 1e-300))
            record(i)
    logger.info(
        "evolve_compare: %d steps of %.3g, final relative L2 %.3e", n_steps, step_dt, l2s[-1]
    )
    return CompareReport(
        times=times,
        l2_distance=l2s,
        linf_distance=linfs,
        density_l2=dens,
        width_ed=w_ed,
        width_reference=w_ref,
        norm_drift_ed=norm_drift,
        norm_drift_reference=float(ref_norm_drift),
        energy_drift=energy_drift,
        method=method,
        dt=step_dt,
        n_steps=n_steps,
        final_ed=(rho, phi),
        final_reference=psi_ref,
    )


def gaussian_packet(grid, center, sigma, momentum=0.0, hbar=1.0):
    """Gaussian density of standard deviation ``sigma`` with phase ``momentum * x``.

    Built analytically so the far tails are floored rather than unwrapped
    from a tiny wavefunction.
    """
    x = grid.x
    log_rho = -((x - center) ** 2) / (2.0 * sigma**2)
    rho = np.exp(log_rho - log_rho.max())
    return DensityField.from_values(grid, rho), PhaseField(grid, momentum * (x - center))


def harmonic_potential(grid, mass, omega, center=0.0):
    return 0.5 * mass * omega**2 * (grid.x - center) ** 2


def free_width(sigma0, t, mass=1.0, hbar=1.0):
    """sigma(t) of a free Gaussian released at rest with density width sigma0."""
    return sigma0 * np.sqrt(1.0 + (hbar * t / (2.0 * mass * sigma0**2)) ** 2)
