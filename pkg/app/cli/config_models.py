"""
Run configuration schema.

A run is described by a TOML document validated into :class:`RunConfig`.
Numeric keys carry their unit in the key suffix (``_mhz``, ``_us``, ``_mm``,
``_ns``); a value may also be a string with an explicit unit such as
``"6.9 MHz"`` or ``"2500 ns"``, converted to the key's unit.

Example::

    protocol = "gem_eit"
    seed = 7

    [physical]
    od = 80
    omega_c_max_mhz = "6.9 MHz"

    [pulse]
    sigma_us = 2.5
    detuning_mhz = 0.1

    [[sweep.axes]]
    name = "pulse.detuning_mhz"
    values = [-0.1, 0.0, 0.1]
"""

from __future__ import annotations

import itertools
import logging
import math
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import partial
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from app.core.config import settings
from app.core.exceptions import ConfigError
from app.core.grid import make_grid
from app.core.units import DEFAULT_GAMMA_MHZ, ConfigPhysical, convert_units, mhz_to_rad, us_to_s
from app.domain.models import ComplexTrace, PhysicalParams, SimGrid
from app.helpers.utils import get_dotted, set_dotted
from app.services.sequence import ProtocolConfig
from app.services.signal import DetectionSpec, PulseKind, PulseSpec

logger = logging.getLogger(__name__)


# ── Unit-suffixed quantities ─────────────────────────────────────────────

_UNITS: dict[str, dict[str, float]] = {
    "frequency": {"hz": 1e-6, "khz": 1e-3, "mhz": 1.0, "ghz": 1e3},
    "time": {"s": 1e6, "ms": 1e3, "us": 1.0, "µs": 1.0, "ns": 1e-3},
    "time_ns": {"s": 1e9, "ms": 1e6, "us": 1e3, "µs": 1e3, "ns": 1.0, "ps": 1e-3},
    "length": {"m": 1e3, "cm": 10.0, "mm": 1.0, "um": 1e-3, "µm": 1e-3},
    "gradient": {"mhz/mm": 1.0, "mhz/cm": 0.1, "khz/mm": 1e-3, "mhz/m": 1e-3},
    "rate": {"/us": 1.0, "/µs": 1.0, "/ms": 1e-3, "/s": 1e-6},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\s\d].*?)?\s*$")


def _quantity(dimension: str, value: Any) -> Any:
    if isinstance(value, bool) or not isinstance(value, str):
        return value
    match = _QUANTITY.match(value)
    if not match:
        raise ValueError(f"cannot read {value!r} as a {dimension} quantity")
    number, unit = float(match.group(1)), (match.group(2) or "").strip().lower().replace(" ", "")
    if not unit:
        return number
    scale = _UNITS[dimension].get(unit)
    if scale is None:
        allowed = ", ".join(sorted(_UNITS[dimension]))
        raise ValueError(f"unit {match.group(2)!r} is not a {dimension} unit (use one of {allowed})")
    return number * scale


MHz = Annotated[float, BeforeValidator(partial(_quantity, "frequency"))]
Micros = Annotated[float, BeforeValidator(partial(_quantity, "time"))]
Nanos = Annotated[float, BeforeValidator(partial(_quantity, "time_ns"))]
Millimetres = Annotated[float, BeforeValidator(partial(_quantity, "length"))]
MHzPerMm = Annotated[float, BeforeValidator(partial(_quantity, "gradient"))]
PerMicro = Annotated[float, BeforeValidator(partial(_quantity, "rate"))]


class ConfigModel(BaseModel):
    """Strict base: unknown keys are rejected, assignments re-validated."""
    model_config = ConfigDict(extra="forbid", validate_assignment=True, allow_inf_nan=False)


# ── Sections ─────────────────────────────────────────────────────────────

class PhysicalSection(ConfigModel):
    od: float = Field(80.0, ge=0, description="Resonant optical depth of the whole cloud")
    gamma_mhz: MHz = Field(DEFAULT_GAMMA_MHZ, gt=0,
                           description="Excited-state linewidth Γ/2π (Rb D1 external constant)")
    length_mm: Millimetres = Field(10.0, gt=0, description="Cloud length L")
    gradient_mhz_per_mm: MHzPerMm = Field(0.05, description="Two-photon detuning gradient β/2π")
    delta_gem_mhz: MHz = Field(30.0, description="Single-photon detuning Δ/2π for GEM segments")
    omega_c_max_mhz: MHz = Field(6.9, ge=0, description="Peak coupling Rabi frequency Ω_C/2π")
    omega0_mhz: MHz = Field(0.0, description="Two-photon resonance offset ω₀/2π")
    dephasing_per_us: PerMicro = Field(0.0, ge=0, description="Ground-state dephasing rate γ_s")


class GridSection(ConfigModel):
    nz: int = Field(201, ge=2, description="Spatial grid points")
    dt_ns: Nanos = Field(2.0, gt=0, description="Time step")


class DensitySection(ConfigModel):
    profile: Literal["super_gaussian", "flat"] = Field("super_gaussian", description="Atomic density shape")
    order: int = Field(4, ge=1, description="Super-Gaussian order m")
    width_fraction: float = Field(0.8, gt=0, description="Super-Gaussian width w as a fraction of L")


class ScheduleSection(ConfigModel):
    t1_us: Micros = Field(10.0, ge=0, description="Storage time at +β before the gradient flip")
    t2_us: Micros = Field(10.0, ge=0, description="Unwinding time at −β")
    delta_eit_mhz: MHz = Field(0.0, description="Single-photon detuning Δ/2π for EIT segments")
    eit_read_ramp_us: Micros = Field(0.5, ge=0, description="Coupling turn-on time of the EIT read")
    eit_read_duration_us: Micros = Field(10.0, gt=0, description="Length of the EIT read segment")
    eit_write_omega_c_mhz: Optional[MHz] = Field(None, ge=0,
                                                 description="EIT write coupling Ω/2π (default: omega_c_max)")
    eit_stop_ramp_us: Micros = Field(1.0, ge=0, description="Coupling switch-off time that stops the light")
    eit_stop_delay_us: Optional[Micros] = Field(
        None, ge=0, description="Start of the switch-off within the write (default: window centre mid-cloud)")
    settle_us: Micros = Field(1.0, gt=0, description="Dark wait before the EIT → GEM hand-off")
    hold_us: Micros = Field(5.0, gt=0, description="Storage time of the eit_only protocol")
    gem_read_lead_us: Micros = Field(4.0, gt=0, description="GEM read opens this long before the rephasing")
    gem_read_margin_us: Micros = Field(2.0, ge=0, description="GEM read extension after the mirrored window")
    gradient_ramp_us: Micros = Field(0.0, ge=0, description="Linear gradient switching time")
    light_shift_compensation: bool = Field(True, description="Tune the coupling to the light-shifted resonance")
    store_gradient_sign: Literal[1, -1] = Field(
        1, description="Sign of the storage gradient; the read uses the opposite sign")


class PulseSection(ConfigModel):
    kind: PulseKind = Field(PulseKind.GAUSSIAN, description="gaussian, two_tone or double_pulse")
    sigma_us: Micros = Field(2.5, gt=0, description="Gaussian width σ of the field envelope")
    sigmas_us: Optional[list[Micros]] = Field(None, description="Per-lobe widths for double pulses")
    center_us: Optional[Micros] = Field(None, description="Pulse (pair) centre; default 4σ into the window")
    detuning_mhz: MHz = Field(0.0, description="Two-photon detuning ω/2π of the signal")
    tone_separation_mhz: MHz = Field(1.0, gt=0, description="Tone spacing δ_ω/2π of two_tone pulses")
    separation_us: Micros = Field(1.0, gt=0, description="Lobe spacing δ_t of double pulses")
    amplitudes: list[float] = Field(default_factory=lambda: [1.0], min_length=1,
                                    description="Lobe amplitudes (field units)")
    phases_rad: list[float] = Field(default_factory=lambda: [0.0], min_length=1,
                                    description="Lobe phases")
    window_us: Optional[Micros] = Field(None, gt=0, description="Write window; default centre + 4σ")
    coupling_offset_mhz: MHz = Field(
        0.0, description="Coupling-frequency offset, applied as an equal shift of the signal detuning")

    @model_validator(mode="after")
    def _check_amplitudes(self) -> PulseSection:
        if any(a < 0 for a in self.amplitudes):
            raise ValueError("amplitudes must be non-negative")
        if self.sigmas_us is not None and any(s <= 0 for s in self.sigmas_us):
            raise ValueError("sigmas_us must be positive")
        return self


class DetectionSection(ConfigModel):
    lo_offset_mhz: MHz = Field(5.0, description="Local-oscillator offset ω_LO/2π")
    noise_sigma: float = Field(0.0, ge=0, description="Detector noise per sample (trace units)")
    n_sequences: int = Field(200, ge=1, description="Sequences averaged coherently")


EmitKind = Literal["fields", "trace", "spectrum", "metrics", "all"]


class OutputSection(ConfigModel):
    emit: list[EmitKind] = Field(default_factory=lambda: ["trace", "spectrum", "metrics"],
                                 description="Outputs to write")
    spectrum_window: Literal["none", "hann"] = Field("none", description="Window applied before the DFT")
    record_every: Optional[int] = Field(None, ge=1, description="Time decimation of the field record")


class SweepAxis(ConfigModel):
    name: str = Field(..., description="Dotted key to vary, e.g. pulse.detuning_mhz")
    values: list[Union[float, str]] = Field(..., min_length=1, description="Values to run")


class SweepSection(ConfigModel):
    axes: list[SweepAxis] = Field(default_factory=list, description="Cartesian sweep axes")
    workers: Optional[int] = Field(None, ge=1, description="Parallel runs (default: settings)")


class RunConfig(ConfigModel):
    protocol: Literal["gem_eit", "eit_gem", "gem_only", "eit_only"] = Field(
        ..., description="Protocol sequence to run")
    seed: Optional[int] = Field(None, description="RNG seed for detector noise")
    physical: PhysicalSection = Field(default_factory=PhysicalSection)
    grid: GridSection = Field(default_factory=GridSection)
    density: DensitySection = Field(default_factory=DensitySection)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    pulse: PulseSection = Field(default_factory=PulseSection)
    detection: DetectionSection = Field(default_factory=DetectionSection)
    output: OutputSection = Field(default_factory=OutputSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @model_validator(mode="after")
    def _check_sweep_keys(self) -> RunConfig:
        data = self.model_dump()
        for axis in self.sweep.axes:
            if axis.name.split(".")[0] in ("sweep", "output"):
                raise ValueError(f"sweep axis {axis.name!r} cannot vary {axis.name.split('.')[0]} settings")
            try:
                get_dotted(data, axis.name)
            except KeyError:
                raise ValueError(f"sweep axis {axis.name!r} does not name a config key") from None
        return self

    # ── Resolution to SI ────────────────────────────────────────────────

    def physical_params(self) -> PhysicalParams:
        p = self.physical
        return convert_units(ConfigPhysical(
            od=p.od,
            gamma_mhz=p.gamma_mhz,
            length_mm=p.length_mm,
            gradient_mhz_per_mm=p.gradient_mhz_per_mm,
            delta_mhz=p.delta_gem_mhz,
            omega_c_max_mhz=p.omega_c_max_mhz,
            omega0_mhz=p.omega0_mhz,
            dephasing_per_us=p.dephasing_per_us,
        ))

    def pulse_spec(self) -> PulseSpec:
        p = self.pulse
        sigmas = tuple(us_to_s(s) for s in p.sigmas_us) if p.sigmas_us else ()
        sigma_max = max((p.sigma_us, *(p.sigmas_us or ())))
        half_span = 0.5 * p.separation_us if p.kind == PulseKind.DOUBLE_PULSE else 0.0
        center = p.center_us if p.center_us is not None else 4.0 * sigma_max + half_span
        base = p.detuning_mhz + p.coupling_offset_mhz
        if p.kind == PulseKind.TWO_TONE:
            detunings = (base - 0.5 * p.tone_separation_mhz, base + 0.5 * p.tone_separation_mhz)
        else:
            detunings = (base,)
        try:
            return PulseSpec(
                kind=p.kind,
                sigma_t=us_to_s(p.sigma_us),
                center_t=us_to_s(center),
                detunings=tuple(mhz_to_rad(d) for d in detunings),
                amplitudes=tuple(p.amplitudes),
                phases=tuple(p.phases_rad),
                separation=us_to_s(p.separation_us) if p.kind == PulseKind.DOUBLE_PULSE else 0.0,
                sigmas=sigmas,
            )
        except ValueError as exc:
            raise ConfigError(f"pulse: {exc}") from exc

    def write_window(self) -> float:
        """Write window length, s."""
        p = self.pulse
        if p.window_us is not None:
            return us_to_s(p.window_us)
        spec = self.pulse_spec()
        return max(c + 4.0 * s for c, s, _, _, _ in spec.lobes())

    def write_grid(self, params: PhysicalParams) -> SimGrid:
        return make_grid(params, self.grid.nz, self.write_window(), self.grid.dt_ns * 1e-9)

    def detection_spec(self, seed: Optional[int]) -> DetectionSpec:
        d = self.detection
        return DetectionSpec(mhz_to_rad(d.lo_offset_mhz), d.noise_sigma, d.n_sequences, seed)

    def protocol_config(self, params: PhysicalParams, input_trace: ComplexTrace) -> ProtocolConfig:
        s = self.schedule
        us = us_to_s
        band = 0.5 * params.memory_bandwidth
        for _, _, detuning, _, _ in self.pulse_spec().lobes():
            if self.protocol in ("gem_eit", "gem_only") and abs(detuning) > band:
                logger.warning("Signal detuning %.3f MHz lies outside the memory bandwidth ±%.3f MHz",
                               detuning / (2 * math.pi * 1e6), band / (2 * math.pi * 1e6))
        return ProtocolConfig(
            params=params,
            input_trace=input_trace,
            nz=self.grid.nz,
            density_order=self.density.order,
            density_width_fraction=None if self.density.profile == "flat" else self.density.width_fraction,
            t1=us(s.t1_us),
            t2=us(s.t2_us),
            delta_eit=mhz_to_rad(s.delta_eit_mhz),
            eit_read_ramp=us(s.eit_read_ramp_us),
            eit_read_duration=us(s.eit_read_duration_us),
            eit_write_omega_c=None if s.eit_write_omega_c_mhz is None else mhz_to_rad(s.eit_write_omega_c_mhz),
            eit_stop_ramp=us(s.eit_stop_ramp_us),
            eit_stop_delay=None if s.eit_stop_delay_us is None else us(s.eit_stop_delay_us),
            eit_settle=us(s.settle_us),
            eit_hold=us(s.hold_us),
            gem_read_lead=us(s.gem_read_lead_us),
            gem_read_margin=us(s.gem_read_margin_us),
            gradient_ramp=us(s.gradient_ramp_us),
            light_shift_compensation=s.light_shift_compensation,
            store_sign=float(s.store_gradient_sign),
            record_every=self.record_every,
        )

    @property
    def record_every(self) -> Optional[int]:
        if self.output.record_every is not None:
            return self.output.record_every
        return settings.FIELD_RECORD_EVERY if "fields" in self.emits else None

    @property
    def emits(self) -> set[str]:
        kinds = set(self.output.emit)
        if "all" in kinds:
            return {"fields", "trace", "spectrum", "metrics"}
        return kinds


# ── Parsing ──────────────────────────────────────────────────────────────

def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def validate_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_validation(exc)}") from exc


def parse_config(text: str) -> RunConfig:
    """TOML text → validated RunConfig; errors carry the offending location."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return validate_config(data)


def defaulted_keys(config: BaseModel, prefix: str = "") -> list[str]:
    """Dotted keys whose values came from defaults rather than the document."""
    keys = []
    for name, value in config:
        key = f"{prefix}{name}"
        if isinstance(value, ConfigModel):
            if name in config.model_fields_set:
                keys.extend(defaulted_keys(value, f"{key}."))
            else:
                keys.extend(_all_keys(value, f"{key}."))
        elif name not in config.model_fields_set:
            keys.append(key)
    return sorted(keys)


def _all_keys(config: BaseModel, prefix: str) -> list[str]:
    keys = []
    for name, value in config:
        if isinstance(value, ConfigModel):
            keys.extend(_all_keys(value, f"{prefix}{name}."))
        else:
            keys.append(f"{prefix}{name}")
    return keys


# ── Sweeps ───────────────────────────────────────────────────────────────

def sweep_plan(config: RunConfig) -> list[dict[str, Any]]:
    """Cartesian product of the sweep axes, first axis slowest."""
    axes = config.sweep.axes
    if not axes:
        raise ConfigError("sweep: at least one axis is required")
    names = [a.name for a in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(a.values for a in axes))]


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Copy of ``config`` with dotted keys replaced and the sweep removed."""
    data = config.model_dump(mode="json", exclude_unset=True)
    data.pop("sweep", None)
    for key, value in overrides.items():
        set_dotted(data, key, value)
    return validate_config(data)
