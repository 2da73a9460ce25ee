"""Temperature-dependent tissue properties.

Properties are piecewise-linear tables over temperature in degrees Celsius.
Inside the breakpoint range the table interpolates linearly; outside it
extrapolates linearly using the terminal segment slope. A single-entry
table is a constant.

Conductivity is either a scalar table (isotropic) or a symmetric 3x3
tensor of tables (anisotropic). Tensor evaluations are checked for
positive definiteness on the single-evaluation path and sampled over the
operating range at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotSPDError

# Operating range (degrees C) over which tables are validated at build time.
VALIDATION_RANGE = (0.0, 120.0)


class PropertyTable:
    """Piecewise-linear scalar property of temperature.

    ``evaluations`` counts calls to :meth:`evaluate`; the fully precomputed
    formulation paths are expected to leave it untouched during stepping.
    """

    def __init__(self, breakpoints):
        pts = np.asarray(breakpoints, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError(f"breakpoints must be (n, 2) pairs, got {pts.shape}")
        temps = pts[:, 0]
        if pts.shape[0] > 1 and not np.all(np.diff(temps) > 0):
            raise ValueError("breakpoint temperatures must be strictly increasing")
        self.temps = temps
        self.values = pts[:, 1]
        self.evaluations = 0

    @classmethod
    def constant(cls, value: float) -> "PropertyTable":
        return cls([[37.0, float(value)]])

    @property
    def is_constant(self) -> bool:
        return self.temps.size == 1

    def evaluate(self, temperature):
        """Interpolate (or linearly extrapolate) at scalar or array input."""
        self.evaluations += 1
        t = np.asarray(temperature, dtype=np.float64)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if self.is_constant:
            out = np.full(t.shape, self.values[0])
        else:
            out = np.interp(t, self.temps, self.values)
            lo = t < self.temps[0]
            if np.any(lo):
                slope = (self.values[1] - self.values[0]) / (self.temps[1] - self.temps[0])
                out[lo] = self.values[0] + slope * (t[lo] - self.temps[0])
            hi = t > self.temps[-1]
            if np.any(hi):
                slope = (self.values[-1] - self.values[-2]) / (self.temps[-1] - self.temps[-2])
                out[hi] = self.values[-1] + slope * (t[hi] - self.temps[-1])
        return float(out[0]) if scalar else out


# Symmetric tensor components in storage order.
TENSOR_COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")


class TensorPropertyTable:
    """Symmetric 3x3 conductivity tensor, one scalar table per component."""

    def __init__(self, components: dict):
        for name in components:
            if name not in TENSOR_COMPONENTS:
                raise ValueError(f"unknown tensor component {name!r}")
        missing = [c for c in ("xx", "yy", "zz") if c not in components]
        if missing:
            raise ValueError(f"tensor table missing diagonal {missing}")
        zero = PropertyTable.constant(0.0)
        self.tables = {}
        for c in TENSOR_COMPONENTS:
            tab = components.get(c, zero)
            if not isinstance(tab, PropertyTable):
                tab = PropertyTable(tab)  # accept raw breakpoint lists
            self.tables[c] = tab

    @property
    def is_constant(self) -> bool:
        return all(t.is_constant for t in self.tables.values())

    def evaluate(self, temperature) -> np.ndarray:
        """Return the tensor at scalar input (3, 3) or array input (n, 3, 3)."""
        t = np.asarray(temperature, dtype=np.float64)
        scalar = t.ndim == 0
        n = 1 if scalar else t.shape[0]
        out = np.zeros((n, 3, 3))
        comp = {c: np.atleast_1d(self.tables[c].evaluate(t)) for c in TENSOR_COMPONENTS}
        out[:, 0, 0] = comp["xx"]
        out[:, 1, 1] = comp["yy"]
        out[:, 2, 2] = comp["zz"]
        out[:, 0, 1] = out[:, 1, 0] = comp["xy"]
        out[:, 0, 2] = out[:, 2, 0] = comp["xz"]
        out[:, 1, 2] = out[:, 2, 1] = comp["yz"]
        return out[0] if scalar else out


@dataclass
class PerfusionParams:
    """Blood perfusion and volumetric source constants.

    w_b: perfusion mass flow per tissue volume, kg/(m^3 s)
    c_b: blood specific heat, J/(kg K)
    T_a: arterial temperature, degrees C
    Q_met: volumetric metabolic heat generation, W/m^3
    """

    w_b: float = 0.0
    c_b: float = 0.0
    T_a: float = 37.0
    Q_met: float = 0.0

    def __post_init__(self):
        if self.w_b < 0:
            raise ValueError("perfusion w_b must be non-negative")
        if self.w_b > 0 and self.c_b <= 0:
            raise ValueError("perfusion c_b must be positive when w_b > 0")


@dataclass
class MaterialModel:
    """Density, specific heat and conductivity of the tissue."""

    density: PropertyTable
    specific_heat: PropertyTable
    conductivity: PropertyTable | TensorPropertyTable = field(
        default_factory=lambda: PropertyTable.constant(0.5)
    )

    def __post_init__(self):
        self.validate()

    @property
    def isotropic(self) -> bool:
        return isinstance(self.conductivity, PropertyTable)

    def conductivity_matrix(self, temperature: float) -> np.ndarray:
        """Evaluate the 3x3 conductivity tensor at one temperature.

        Raises NotSPDError if the interpolated tensor is not positive
        definite.
        """
        if self.isotropic:
            k = self.conductivity.evaluate(temperature)
            if k <= 0:
                raise NotSPDError(f"conductivity {k:.4g} at {temperature:.4g} C is not positive")
            return k * np.eye(3)
        d = self.conductivity.evaluate(temperature)
        _check_spd(d, temperature)
        return d

    def validate(self):
        """Sample tables over the operating range and reject unphysical ones."""
        lo, hi = VALIDATION_RANGE
        sample = np.linspace(lo, hi, 25)
        for name, table in (("density", self.density), ("specific_heat", self.specific_heat)):
            vals = table.evaluate(sample)
            if np.any(vals <= 0):
                t_bad = float(sample[np.argmax(vals <= 0)])
                raise ValueError(
                    f"{name} must stay positive over {lo:g}..{hi:g} C "
                    f"(fails near {t_bad:g} C)"
                )
        if self.isotropic:
            vals = self.conductivity.evaluate(sample)
            if np.any(vals <= 0):
                t_bad = float(sample[np.argmax(vals <= 0)])
                raise NotSPDError(
                    f"conductivity must stay positive over {lo:g}..{hi:g} C "
                    f"(fails near {t_bad:g} C)"
                )
        else:
            tensors = self.conductivity.evaluate(sample)
            for t, d in zip(sample, tensors):
                _check_spd(d, float(t))


def _check_spd(d: np.ndarray, temperature: float):
    try:
        np.linalg.cholesky(d)
    except np.linalg.LinAlgError:
        raise NotSPDError(
            f"conductivity tensor at {temperature:.4g} C is not positive definite"
        ) from None
