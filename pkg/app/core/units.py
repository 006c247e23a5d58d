"""Conversion between config units (MHz, µs, mm) and internal SI / rad/s."""

import math
from dataclasses import dataclass

from app.core.exceptions import ConfigError
from app.domain.models import C_LIGHT, PhysicalParams

TWO_PI = 2.0 * math.pi

# Rb D1 excited-state linewidth; an external constant, not a measured value
# of the experiment being modelled.
DEFAULT_GAMMA_MHZ = 5.75


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{name}: value must be finite, got {value!r}")
    return value


def mhz_to_rad(value: float) -> float:
    """Ordinary frequency in MHz → angular frequency in rad/s."""
    return TWO_PI * 1e6 * _finite("frequency", value)


def rad_to_mhz(value: float) -> float:
    return _finite("frequency", value) / (TWO_PI * 1e6)


def us_to_s(value: float) -> float:
    return 1e-6 * _finite("time", value)


def mm_to_m(value: float) -> float:
    return 1e-3 * _finite("length", value)


def m_to_mm(value: float) -> float:
    return 1e3 * _finite("length", value)


@dataclass(frozen=True)
class ConfigPhysical:
    """Physical parameters in config units."""
    od: float
    gamma_mhz: float
    length_mm: float
    gradient_mhz_per_mm: float
    delta_mhz: float
    omega_c_max_mhz: float
    omega0_mhz: float = 0.0
    dephasing_per_us: float = 0.0
    c_light: float = C_LIGHT


def convert_units(values: ConfigPhysical) -> PhysicalParams:
    """Config units → PhysicalParams in SI with angular frequencies.

    β is given as a gradient of ordinary two-photon detuning per millimetre,
    so β[rad/(s·m)] = 2π·1e6·g[MHz/mm]·1e3.
    """
    od = _finite("od", values.od)
    try:
        return PhysicalParams(
            od=od,
            gamma=mhz_to_rad(values.gamma_mhz),
            length=mm_to_m(values.length_mm),
            beta=mhz_to_rad(values.gradient_mhz_per_mm) / mm_to_m(1.0),
            delta=mhz_to_rad(values.delta_mhz),
            omega_c_max=mhz_to_rad(values.omega_c_max_mhz),
            c_light=_finite("c_light", values.c_light),
            omega0=mhz_to_rad(values.omega0_mhz),
            gamma_s=1e6 * _finite("dephasing", values.dephasing_per_us),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def invert_units(params: PhysicalParams) -> ConfigPhysical:
    """Inverse of :func:`convert_units`."""
    return ConfigPhysical(
        od=params.od,
        gamma_mhz=rad_to_mhz(params.gamma),
        length_mm=m_to_mm(params.length),
        gradient_mhz_per_mm=rad_to_mhz(params.beta * mm_to_m(1.0)),
        delta_mhz=rad_to_mhz(params.delta),
        omega_c_max_mhz=rad_to_mhz(params.omega_c_max),
        omega0_mhz=rad_to_mhz(params.omega0),
        dephasing_per_us=1e-6 * params.gamma_s,
        c_light=params.c_light,
    )
