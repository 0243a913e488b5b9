"""Tactile array model: geometry, binarization, scan circuit, calibration.

The sensor is a 30-unit resistive array read as a 6x5 matrix and split evenly
across the two finger pads: matrix rows 0-2 are pad 0, rows 3-5 are pad 1,
each pad carrying 3 rows x 5 columns of bumps. A unit's flat index is
pad * 15 + row * 5 + col, matching the tactile slice of the observation.

Runtime readout is force-based: contact forces are distributed over bump
footprints (env module), scaled to a signal, and thresholded to bits with a
strict inequality. The scan-circuit model exists for calibration and for
grounding the signal chain in the electrical design: one column line is
driven while the others are grounded, each row line reads through a known
resistor to ground, so a raw reading mixes every element in its row; the
crosstalk cancellation inverts that mixing in closed form.

Threshold calibration replays a rig protocol: a rigid square plate of known
weight pressed at known positions along a 15-unit strip, the plate's weight
carried by the bump footprints it covers in proportion to covered area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, ContractError

N_UNITS = 30
MATRIX_ROWS = 6
MATRIX_COLS = 5
UNITS_PER_PAD = 15
PAD_ROWS = 3

NOMINAL_THRESHOLD = 0.25
STANDARD_GRAVITY = 9.80665


# ----------------------------------------------------------------- geometry

@dataclass(frozen=True)
class ArrayGeometry:
    """Unit layout of one or two pads, in pad-local face coordinates (m).

    unit_centers has shape (n_pads, units_per_pad, 2); the two face axes are
    (u, v) = (across the pad, along the pad). Bump footprints are circles.
    """

    unit_centers: np.ndarray
    footprint_radius: float
    face_half_extents: tuple[float, float]

    @property
    def n_pads(self) -> int:
        return self.unit_centers.shape[0]


def gripper_geometry() -> ArrayGeometry:
    """Both finger pads: 3 rows x 5 columns at 4 mm pitch, 1.9 mm bumps."""
    us = np.array([-4e-3, 0.0, 4e-3])
    vs = np.array([-8e-3, -4e-3, 0.0, 4e-3, 8e-3])
    centers = np.array([[u, v] for u in us for v in vs])
    return ArrayGeometry(
        unit_centers=np.stack([centers, centers]),
        footprint_radius=1.9e-3,
        face_half_extents=(8e-3, 12e-3),
    )


def rig_geometry() -> ArrayGeometry:
    """Calibration strip: 15 units, 3 rows of 5 at 128/256/350 mm along it."""
    vs = np.array([0.128, 0.256, 0.350])
    us = np.array([-0.040, -0.020, 0.0, 0.020, 0.040])
    centers = np.array([[u, v] for v in vs for u in us])
    return ArrayGeometry(
        unit_centers=centers[None, :, :],
        footprint_radius=8e-3,
        face_half_extents=(0.050, 0.200),
    )


def unit_matrix_index(flat: int) -> tuple[int, int]:
    """Flat unit index (0-29) to (row, col) of the 6x5 readout matrix."""
    if not 0 <= flat < N_UNITS:
        raise ContractError(f"unit index {flat} outside 0..{N_UNITS - 1}")
    return flat // MATRIX_COLS, flat % MATRIX_COLS


def _halfplane_integral(a: float, b: float, r: float) -> float:
    """Integral of 2*sqrt(r^2-x^2) dx from a to b (both already in [-r, r])."""

    def f(x: float) -> float:
        return x * math.sqrt(max(r * r - x * x, 0.0)) + r * r * math.asin(min(1.0, max(-1.0, x / r)))

    return f(b) - f(a)


def _corner_area(x_cap: float, y_cap: float, r: float) -> float:
    """Area of the origin-centered disk cut to {x <= x_cap, y <= y_cap}."""
    if x_cap <= -r or y_cap <= -r:
        return 0.0
    x_cap = min(x_cap, r)
    y_cap = min(y_cap, r)
    if y_cap >= r:
        return _halfplane_integral(-r, x_cap, r)
    xc = math.sqrt(max(r * r - y_cap * y_cap, 0.0))
    area = 0.0
    if y_cap >= 0.0:
        # columns outside +-xc are full chords, inside they are capped at y_cap
        area += _halfplane_integral(-r, min(x_cap, -xc), r)
        if x_cap > xc:
            area += _halfplane_integral(xc, x_cap, r)
        lo, hi = -xc, min(x_cap, xc)
    else:
        lo, hi = -xc, min(x_cap, xc)
    if hi > lo:
        area += y_cap * (hi - lo) + 0.5 * _halfplane_integral(lo, hi, r)
    return area


def footprint_overlap_area(cx: float, cy: float, radius: float,
                           xlo: float, xhi: float, ylo: float, yhi: float) -> float:
    """Exact overlap area of a circular footprint and an axis-aligned rectangle."""
    if xhi <= xlo or yhi <= ylo or radius <= 0.0:
        return 0.0
    a = _corner_area(xhi - cx, yhi - cy, radius)
    a -= _corner_area(xlo - cx, yhi - cy, radius)
    a -= _corner_area(xhi - cx, ylo - cy, radius)
    a += _corner_area(xlo - cx, ylo - cy, radius)
    return max(a, 0.0)


# ------------------------------------------------------------- signal chain

def scale_signal(raw: np.ndarray, scale: float) -> np.ndarray:
    """Force (N) to signal units."""
    return np.asarray(raw, dtype=np.float64) * float(scale)


def binarize(signal: np.ndarray, kappa) -> np.ndarray:
    """Strict threshold: bit is 1 iff signal > kappa (equality stays 0)."""
    signal = np.asarray(signal, dtype=np.float64)
    return (signal > np.asarray(kappa, dtype=np.float64)).astype(np.uint8)


def flip_bits(bits: np.ndarray, p_flip: float, rng: np.random.Generator) -> np.ndarray:
    """Independently invert each bit with probability p_flip."""
    bits = np.asarray(bits, dtype=np.uint8)
    if not 0.0 <= p_flip <= 1.0:
        raise ContractError(f"p_flip must be a probability, got {p_flip}")
    if p_flip == 0.0:
        return bits.copy()
    return bits ^ (rng.random(bits.shape) < p_flip).astype(np.uint8)


# ------------------------------------------------------------- scan circuit

@dataclass
class CircuitModel:
    """Resistive matrix with per-row readout resistors and an ADC.

    element_resistance: (6, 5) ohms, one element per matrix cell.
    row_resistor: (6,) known ohms from each row node to ground.
    adc_bits: quantization of readings over [0, drive_voltage]; None or 0
    disables quantization.
    """

    element_resistance: np.ndarray
    row_resistor: np.ndarray
    drive_voltage: float = 5.0
    adc_bits: int | None = 10


def scan_array(circuit: CircuitModel) -> np.ndarray:
    """Read the full matrix: reading[i, c] is row i's voltage with column c driven.

    With ideal column drivers (driven column at drive_voltage, the rest held
    at ground) each row node is loaded by every element in its row plus the
    row resistor, so reading[i, c] = V * g[i, c] / (g_row[i] + sum_j g[i, j]).
    """
    r = np.asarray(circuit.element_resistance, dtype=np.float64)
    r_row = np.asarray(circuit.row_resistor, dtype=np.float64)
    if r.shape != (MATRIX_ROWS, MATRIX_COLS):
        raise ContractError(f"element_resistance shape {r.shape}, expected {(MATRIX_ROWS, MATRIX_COLS)}")
    if r_row.shape != (MATRIX_ROWS,):
        raise ContractError(f"row_resistor shape {r_row.shape}, expected {(MATRIX_ROWS,)}")
    if np.any(r <= 0.0) or np.any(r_row <= 0.0):
        raise ContractError("resistances must be positive")
    g = 1.0 / r
    denom = 1.0 / r_row + g.sum(axis=1)
    v = circuit.drive_voltage * g / denom[:, None]
    if circuit.adc_bits:
        full = float(2**circuit.adc_bits - 1)
        v = np.round(v / circuit.drive_voltage * full) * (circuit.drive_voltage / full)
    return v


def cancel_crosstalk(readings: np.ndarray, row_resistor: np.ndarray,
                     drive_voltage: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Invert the row mixing of scan_array back to per-element resistances.

    Per row, with s = sum of the row's readings, the shared load factor is
    g_row / (1 - s / V), after which each element conductance is
    reading * load / V. Returns (resistance_estimate, ok): rows whose readings
    sum to the drive voltage or contain a full-scale reading are unrecoverable
    and come back NaN with ok False. A zero reading estimates an open element
    (inf ohms), which is a valid recovery.
    """
    v = np.asarray(readings, dtype=np.float64)
    r_row = np.asarray(row_resistor, dtype=np.float64)
    if v.shape != (MATRIX_ROWS, MATRIX_COLS):
        raise ContractError(f"readings shape {v.shape}, expected {(MATRIX_ROWS, MATRIX_COLS)}")
    total = v.sum(axis=1)
    ok_row = (total < drive_voltage * (1.0 - 1e-12)) & np.all(v < drive_voltage, axis=1)
    r_est = np.full_like(v, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        load = (1.0 / r_row) / (1.0 - total / drive_voltage)
        g_est = v * load[:, None] / drive_voltage
        recovered = np.where(g_est > 0.0, 1.0 / np.where(g_est > 0.0, g_est, 1.0), np.inf)
    r_est[ok_row] = recovered[ok_row]
    ok = np.repeat(ok_row[:, None], MATRIX_COLS, axis=1)
    return r_est, ok


# -------------------------------------------------------------- calibration

@dataclass(frozen=True)
class PressProfile:
    """One rig press: a square plate of side size_mm centered at
    (across=0, along=position_mm), loaded with weight_g grams."""

    position_mm: float
    weight_g: float
    size_mm: float = 100.0

    def region(self) -> tuple[float, float, float, float]:
        """(ulo, uhi, vlo, vhi) bounds in meters, pad-local."""
        half = self.size_mm / 2000.0
        v0 = self.position_mm / 1000.0
        return -half, half, v0 - half, v0 + half


RIG_PRESS_GRID = tuple(
    PressProfile(position_mm=pos, weight_g=w)
    for pos in (128.0, 256.0, 350.0)
    for w in (50.0, 100.0, 200.0, 500.0)
)


def replay_press(geometry: ArrayGeometry, profile: PressProfile) -> np.ndarray:
    """Per-unit force (N) for one press on a single-pad rig.

    The plate is rigid, so its full weight rides on the covered footprints,
    split in proportion to covered footprint area.
    """
    if geometry.n_pads != 1:
        raise ContractError("rig replay expects a single-pad geometry")
    ulo, uhi, vlo, vhi = profile.region()
    centers = geometry.unit_centers[0]
    areas = np.array([
        footprint_overlap_area(cu, cv, geometry.footprint_radius, ulo, uhi, vlo, vhi)
        for cu, cv in centers
    ])
    total = areas.sum()
    if total <= 0.0:
        raise CalibrationError(
            f"press at {profile.position_mm} mm (side {profile.size_mm} mm) loads no unit"
        )
    weight_n = profile.weight_g / 1000.0 * STANDARD_GRAVITY
    return weight_n * areas / total


@dataclass
class CalibrationResult:
    scale: float
    kappa: np.ndarray          # per rig unit
    signals: np.ndarray        # (n_profiles, n_units) after scaling
    loaded: np.ndarray         # (n_profiles, n_units) bool, geometry-derived
    profiles: tuple[PressProfile, ...]

    def activation(self) -> np.ndarray:
        """Bits each press produces under the fitted thresholds."""
        return np.stack([binarize(s, self.kappa) for s in self.signals])


def calibrate_thresholds(
    press_profiles,
    geometry: ArrayGeometry | None = None,
    nominal_threshold: float = NOMINAL_THRESHOLD,
) -> CalibrationResult:
    """Fit the force scale and per-unit thresholds from rig presses.

    The scale maps the weakest loaded per-unit force across all profiles to
    twice the nominal threshold; each unit's threshold is then the midpoint
    between its largest unloaded signal and its smallest loaded signal. Every
    unit must be loaded by at least one profile, and the two signal classes
    must separate per unit, otherwise calibration fails with the offenders.
    """
    geometry = rig_geometry() if geometry is None else geometry
    profiles = tuple(press_profiles)
    if not profiles:
        raise CalibrationError("no press profiles given")
    n_units = geometry.unit_centers.shape[1]
    forces = np.stack([replay_press(geometry, p) for p in profiles])
    loaded = forces > 0.0

    uncovered = np.flatnonzero(~loaded.any(axis=0))
    if uncovered.size:
        raise CalibrationError(f"profiles never load units {uncovered.tolist()}")

    scale = 2.0 * nominal_threshold / forces[loaded].min()
    signals = forces * scale

    kappa = np.empty(n_units)
    for u in range(n_units):
        on = signals[loaded[:, u], u]
        off = signals[~loaded[:, u], u]
        hi_off = float(off.max()) if off.size else 0.0
        lo_on = float(on.min())
        if hi_off >= lo_on:
            bad = [i for i in range(len(profiles)) if not loaded[i, u] and signals[i, u] >= lo_on]
            raise CalibrationError(
                f"unit {u}: unloaded signal {hi_off} from profiles {bad} reaches loaded minimum {lo_on}"
            )
        kappa[u] = 0.5 * (hi_off + lo_on)
    return CalibrationResult(scale=float(scale), kappa=kappa, signals=signals,
                             loaded=loaded, profiles=profiles)


def tile_thresholds(kappa_pad: np.ndarray) -> np.ndarray:
    """Per-pad thresholds to the runtime 30-vector (both pads identical)."""
    kappa_pad = np.asarray(kappa_pad, dtype=np.float64)
    if kappa_pad.shape != (UNITS_PER_PAD,):
        raise ContractError(f"expected {UNITS_PER_PAD} thresholds, got {kappa_pad.shape}")
    return np.concatenate([kappa_pad, kappa_pad])
