"""Exact Fokker-Planck reference densities on periodic lattices.

The Langevin sampler in :mod:`stochsec.energy` approximates a Gibbs
density with stochastic chains.  This module evolves the probability
density itself under the Fokker-Planck generator

    L u = div( exp(-V) grad( exp(V) u ) )

discretized with Fourier differentiation on a regular periodic lattice
(V is the dimensionless potential, inverse temperature already folded
in).  In one and two dimensions this gives a machine-precision
stationary density against which histogrammed chain end-states can be
scored in total variation.

Box-supported potentials are lifted to the torus by substituting
``x = cos(phi)`` per coordinate, which makes them automatically
2*pi-periodic and even, so no boundary handling is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .energy import SgldConfig, sgld_chain

__all__ = [
    "PeriodicLattice",
    "DensityField",
    "PotentialField",
    "PotentialOverflowError",
    "SolverInstabilityError",
    "EvolveResult",
    "C_STABILITY",
    "fourier_derivative",
    "apply_generator",
    "stability_limit",
    "evolve",
    "periodize_arccos",
    "uniform_density",
    "gibbs_density",
    "make_density",
    "histogram_on_lattice",
    "total_variation",
    "compare_sampler",
    "save_field",
    "load_density_field",
    "load_potential_field",
]


class PotentialOverflowError(ValueError):
    """Potential values too large for the exp/inverse-exp factors."""


class SolverInstabilityError(RuntimeError):
    """Density went significantly negative during time integration."""

    def __init__(self, step: int, min_value: float):
        super().__init__(
            f"density reached {min_value:.3e} at step {step}; "
            "reduce dt or refine the lattice")
        self.step = step
        self.min_value = min_value


@dataclass(frozen=True)
class PeriodicLattice:
    """Regular grid on a d-torus; same point count on every axis."""

    dim: int
    n_points: int
    periods: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only 1-D and 2-D lattices are supported")
        if self.n_points < 8 or self.n_points % 2 != 0:
            raise ValueError("n_points must be even and >= 8")
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if len(self.periods) != self.dim:
            raise ValueError("need one period per axis")
        if any(p <= 0 for p in self.periods):
            raise ValueError("periods must be positive")

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.dim

    @property
    def size(self) -> int:
        return self.n_points ** self.dim

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(p / self.n_points for p in self.periods)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacings)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for dim {self.dim}")
        return np.arange(self.n_points) * self.spacings[axis]

    def meshgrid(self) -> list[np.ndarray]:
        axes = [self.axis_coordinates(a) for a in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def points(self) -> np.ndarray:
        """All lattice points, flattened to (size, dim) in C order."""
        grids = self.meshgrid()
        return np.stack([g.reshape(-1) for g in grids], axis=1)


def _check_field(lattice: PeriodicLattice, values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != lattice.grid_shape:
        raise ValueError(f"{what} shape {values.shape} does not match "
                         f"lattice grid {lattice.grid_shape}")
    if not np.isfinite(values).all():
        raise ValueError(f"{what} contains non-finite values")
    return values


@dataclass(frozen=True)
class DensityField:
    """Nonnegative density on a lattice with unit cell-weighted mass."""

    lattice: PeriodicLattice
    values: np.ndarray

    def __post_init__(self):
        values = _check_field(self.lattice, self.values, "density")
        if values.min() < -1e-8:
            raise ValueError(f"density has negative values (min {values.min():.3e})")
        mass = values.sum() * self.lattice.cell_volume
        if abs(mass - 1.0) > 1e-12:
            raise ValueError(f"density mass {mass!r} is not 1 within 1e-12")
        object.__setattr__(self, "values", values)

    def cell_masses(self) -> np.ndarray:
        return self.values * self.lattice.cell_volume


@dataclass(frozen=True)
class PotentialField:
    """Dimensionless potential (inverse temperature folded in) on a lattice."""

    lattice: PeriodicLattice
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _check_field(self.lattice, self.values, "potential"))


def make_density(lattice: PeriodicLattice, values: np.ndarray) -> DensityField:
    """Normalize raw nonnegative values into a unit-mass DensityField."""
    values = _check_field(lattice, values, "density")
    mass = values.sum() * lattice.cell_volume
    if mass <= 0:
        raise ValueError("density values must have positive total mass")
    return DensityField(lattice, values / mass)


def uniform_density(lattice: PeriodicLattice) -> DensityField:
    return make_density(lattice, np.ones(lattice.grid_shape))


def gibbs_density(potential: PotentialField) -> DensityField:
    """exp(-V)/Z sampled on the lattice, normalized by the cell rule."""
    v = potential.values
    return make_density(potential.lattice, np.exp(-(v - v.min())))


def fourier_derivative(lattice: PeriodicLattice, values: np.ndarray,
                       axis: int = 0) -> np.ndarray:
    """Spectral first derivative along one lattice axis.

    Multiplies Fourier mode k by i*2*pi*k/period with the Nyquist mode
    zeroed, then checks that the inverse transform is real to rounding.
    """
    values = np.asarray(values, dtype=np.float64)
    batched = _batch_derivative(lattice, values[None], axis)
    return batched[0]


def _batch_derivative(lattice: PeriodicLattice, stack: np.ndarray,
                      axis: int) -> np.ndarray:
    """Derivative along lattice `axis` for a (B, *grid) stack of fields."""
    if not 0 <= axis < lattice.dim:
        raise ValueError(f"axis {axis} out of range for dim {lattice.dim}")
    n = lattice.n_points
    freqs = np.fft.fftfreq(n, d=lattice.spacings[axis])
    mult = 2j * np.pi * freqs
    mult[n // 2] = 0.0
    shape = [1] * stack.ndim
    shape[axis + 1] = n
    spec = np.fft.fft(stack, axis=axis + 1) * mult.reshape(shape)
    out = np.fft.ifft(spec, axis=axis + 1)
    tol = 1e-10 * max(1.0, np.abs(out.real).max())
    residue = np.abs(out.imag).max()
    if residue >= tol:
        raise AssertionError(f"imaginary residue {residue:.3e} exceeds {tol:.3e}")
    return np.ascontiguousarray(out.real)


_OVERFLOW_HALF_RANGE = 300.0


def _generator_factors(potential: PotentialField) -> tuple[np.ndarray, np.ndarray]:
    """exp(+V), exp(-V) after centering V; the generator is shift-invariant."""
    v = potential.values
    center = 0.5 * (v.max() + v.min())
    half_range = v.max() - center
    if half_range > _OVERFLOW_HALF_RANGE:
        raise PotentialOverflowError(
            f"potential spans {2 * half_range:.1f}; exp factors would overflow. "
            "Rescale the potential (e.g. lower the inverse temperature).")
    shifted = v - center
    return np.exp(shifted), np.exp(-shifted)


def apply_generator(potential: PotentialField, u: np.ndarray) -> np.ndarray:
    """One application of the generator div(exp(-V) grad(exp(V) u))."""
    u = _check_field(potential.lattice, np.asarray(u, dtype=np.float64), "field")
    return _apply_generator_batched(potential, u[None])[0]


def _apply_generator_batched(potential: PotentialField, stack: np.ndarray) -> np.ndarray:
    lattice = potential.lattice
    grow, decay = _generator_factors(potential)
    lifted = grow[None] * stack
    out = np.zeros_like(stack)
    for axis in range(lattice.dim):
        flux = decay[None] * _batch_derivative(lattice, lifted, axis)
        out += _batch_derivative(lattice, flux, axis)
    return out


# RK4 time-step bound dt < C_STABILITY / (N^2 * (1 + max|grad V|)).
# Calibrated against the spectral Laplacian's eigenvalue (pi*N/period)^2:
# for periods >= 1 this keeps dt below ~0.7x the linear stability edge.
C_STABILITY = 0.2


def stability_limit(potential: PotentialField) -> float:
    """Largest admissible RK4 time step for this potential's lattice."""
    lattice = potential.lattice
    if min(lattice.periods) < 1.0:
        raise ValueError("stability constant is calibrated for periods >= 1")
    grad_max = 0.0
    for axis in range(lattice.dim):
        d = fourier_derivative(lattice, potential.values, axis)
        grad_max = max(grad_max, float(np.abs(d).max()))
    n = lattice.n_points
    return C_STABILITY / (n * n * (1.0 + grad_max))


@dataclass(frozen=True)
class EvolveResult:
    density: DensityField
    steps: int
    dt: float
    max_mass_drift: float


# Lattices up to this many points get a dense step matrix; one RK4 step
# is then a single mat-vec, which makes long relaxation runs cheap.
_DENSE_LIMIT = 1024


def evolve(rho0: DensityField, potential: PotentialField, total_time: float,
           dt: float | None = None, negative_tolerance: float = 1e-8) -> EvolveResult:
    """Integrate d rho/dt = L rho with classical RK4.

    Mass is renormalized to 1 after every step and the largest
    renormalization drift is reported.  A density dipping below
    -negative_tolerance aborts the run as a numerical instability.
    """
    if rho0.lattice != potential.lattice:
        raise ValueError("density and potential live on different lattices")
    if total_time <= 0:
        raise ValueError("total_time must be positive")
    limit = stability_limit(potential)
    if dt is None:
        dt = 0.9 * limit
    if not 0 < dt < limit:
        raise ValueError(f"dt {dt!r} outside stable range (0, {limit:.3e})")
    steps = max(1, math.ceil(total_time / dt))
    dt = total_time / steps
    lattice = rho0.lattice
    cell = lattice.cell_volume

    if lattice.size <= _DENSE_LIMIT:
        basis = np.eye(lattice.size).reshape(lattice.size, *lattice.grid_shape)
        gen = _apply_generator_batched(potential, basis)
        gen = gen.reshape(lattice.size, lattice.size).T
        step_matrix = np.eye(lattice.size)
        power = np.eye(lattice.size)
        for order in range(1, 5):
            power = (dt / order) * (gen @ power)
            step_matrix += power
        rho = rho0.values.reshape(-1).copy()
        advance = lambda r: step_matrix @ r
    else:
        def advance(r):
            field = r.reshape(lattice.grid_shape)
            k1 = _apply_generator_batched(potential, field[None])[0]
            k2 = _apply_generator_batched(potential, (field + 0.5 * dt * k1)[None])[0]
            k3 = _apply_generator_batched(potential, (field + 0.5 * dt * k2)[None])[0]
            k4 = _apply_generator_batched(potential, (field + dt * k3)[None])[0]
            return (field + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)).reshape(-1)
        rho = rho0.values.reshape(-1).copy()

    max_drift = 0.0
    for step in range(steps):
        rho = advance(rho)
        mass = rho.sum() * cell
        max_drift = max(max_drift, abs(mass - 1.0))
        rho /= mass
        low = rho.min()
        if low < -negative_tolerance:
            raise SolverInstabilityError(step, float(low))
    final = make_density(lattice, np.clip(rho.reshape(lattice.grid_shape), 0.0, None))
    return EvolveResult(density=final, steps=steps, dt=dt, max_mass_drift=max_drift)


def periodize_arccos(energy_fn, lattice: PeriodicLattice) -> PotentialField:
    """Lift a box potential on [-1, 1]^d to the torus via x = cos(phi).

    The lifted potential V(phi_1..phi_d) = E(cos phi_1, .., cos phi_d) is
    2*pi-periodic and even along every axis.  Cosine values are mirrored
    across the half lattice so the evenness holds exactly in floating
    point.  `energy_fn` maps a (B, d) batch of box points to (B,) values.
    """
    for period in lattice.periods:
        if abs(period - 2 * math.pi) > 1e-12:
            raise ValueError("arccos lift requires axis periods of 2*pi")
    n = lattice.n_points
    cos_axis = np.empty(n)
    half = np.cos(2 * np.pi * np.arange(n // 2 + 1) / n)
    cos_axis[:n // 2 + 1] = half
    cos_axis[n // 2 + 1:] = half[-2:0:-1]
    grids = np.meshgrid(*([cos_axis] * lattice.dim), indexing="ij")
    points = np.stack([g.reshape(-1) for g in grids], axis=1)
    values = np.asarray(energy_fn(points), dtype=np.float64).reshape(lattice.grid_shape)
    return PotentialField(lattice, values)


def histogram_on_lattice(lattice: PeriodicLattice, points: np.ndarray) -> np.ndarray:
    """Fraction of points per lattice cell (cells centered on grid nodes)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != lattice.dim:
        raise ValueError(f"points have dim {points.shape[1]}, lattice {lattice.dim}")
    n = lattice.n_points
    counts = np.zeros(lattice.grid_shape)
    idx = []
    for axis in range(lattice.dim):
        spacing = lattice.spacings[axis]
        wrapped = np.mod(points[:, axis], lattice.periods[axis])
        idx.append(np.floor(wrapped / spacing + 0.5).astype(np.int64) % n)
    np.add.at(counts, tuple(idx), 1.0)
    return counts / points.shape[0]


def total_variation(mass_a: np.ndarray, mass_b: np.ndarray) -> float:
    """TV distance between two per-cell probability mass arrays."""
    mass_a = np.asarray(mass_a, dtype=np.float64)
    mass_b = np.asarray(mass_b, dtype=np.float64)
    if mass_a.shape != mass_b.shape:
        raise ValueError("mass arrays must have matching shapes")
    return 0.5 * float(np.abs(mass_a - mass_b).sum())


def compare_sampler(model, potential: PotentialField, lattice: PeriodicLattice,
                    n_chains: int, chain_config: SgldConfig,
                    rng: np.random.Generator, total_time: float = 10.0,
                    dt: float | None = None) -> float:
    """TV distance between chain end-states and the evolved density.

    Chains start uniform on the torus, run under the model's energy, and
    their end states are wrapped and histogrammed onto the lattice.  The
    reference is `evolve` from the uniform density for `total_time`.
    Meaningful only for torus potentials (see periodize_arccos); the
    model's implied inverse temperature must match the potential's scale
    for the distance to be small.
    """
    if potential.lattice != lattice:
        raise ValueError("potential lattice does not match comparison lattice")
    if n_chains <= 0:
        raise ValueError("need at least one chain")
    stationary = evolve(uniform_density(lattice), potential, total_time, dt).density
    x0 = rng.uniform(0.0, lattice.periods, size=(n_chains, lattice.dim))
    ends = np.atleast_2d(sgld_chain(model, x0, chain_config, rng))
    observed = histogram_on_lattice(lattice, ends)
    return total_variation(observed, stationary.cell_masses())


def save_field(path, field: DensityField | PotentialField) -> None:
    save_tensors(path, {
        "values": field.values,
        "periods": np.asarray(field.lattice.periods),
    })


def _load_field(path) -> tuple[PeriodicLattice, np.ndarray]:
    tensors = load_tensors(path)
    values = tensors["values"]
    periods = tuple(float(p) for p in np.atleast_1d(tensors["periods"]))
    lattice = PeriodicLattice(dim=values.ndim, n_points=values.shape[0],
                              periods=periods)
    return lattice, values


def load_density_field(path) -> DensityField:
    lattice, values = _load_field(path)
    try:
        return DensityField(lattice, values)
    except ValueError:
        return make_density(lattice, values)


def load_potential_field(path) -> PotentialField:
    lattice, values = _load_field(path)
    return PotentialField(lattice, values)
