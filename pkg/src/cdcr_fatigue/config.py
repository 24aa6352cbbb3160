"""Chain configuration and polynomial joint stiffness parameters.

Files store lengths in millimetres and angles in degrees; every object in
memory is SI (m, rad, kg, N).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

MM = 1e-3
G0 = 9.81

# Gravity presets in the robot base frame. The chain axis is +z and bending
# happens in the x-z plane, so the y component never does in-plane work.
GRAVITY_VERTICAL = (0.0, 0.0, -G0)
GRAVITY_HORIZONTAL = (-G0, 0.0, 0.0)
GRAVITY_OFF = (0.0, 0.0, 0.0)

BODIES_PER_MODULE = 4  # twist body, inner BendBeam, outer BendBeam, top plate


class ParameterDomainError(ValueError):
    """Stiffness parameters evaluate to a non-positive stiffness."""


class ConfigError(ValueError):
    """Inconsistent chain configuration."""


@dataclass(frozen=True)
class StiffnessParams:
    """Polynomial joint stiffnesses.

    ``a`` gives the BendBeam prismatic stiffness K_p1(L) = sum a_i L^i (N/m),
    ``b`` the lumped TwistBeam prismatic stiffness K_p2(L) (N/m) and ``c`` the
    TwistBeam revolute stiffness K_r2(theta) = sum c_i theta^i (N m/rad).
    """

    a: tuple[float, ...]
    b: tuple[float, ...]
    c: tuple[float, ...]
    degree: int = 2
    check_range: tuple[float, float] = (25 * MM, math.radians(90.0))

    def __post_init__(self) -> None:
        for name in ("a", "b", "c"):
            coeffs = tuple(float(v) for v in getattr(self, name))
            if len(coeffs) != self.degree + 1:
                raise ParameterDomainError(
                    f"{name} needs {self.degree + 1} coefficients, got {len(coeffs)}"
                )
            object.__setattr__(self, name, coeffs)
        lin = np.linspace(-self.check_range[0], self.check_range[0], 51)
        ang = np.linspace(-self.check_range[1], self.check_range[1], 51)
        for name, grid in (("a", lin), ("b", lin), ("c", ang)):
            vals = np.polynomial.polynomial.polyval(grid, getattr(self, name))
            # an all-zero polynomial is allowed: it is the "no stiffness" robot
            if np.any(vals < 0) or (np.any(vals == 0) and np.any(vals != 0)):
                raise ParameterDomainError(f"K from {name} is not positive on the admissible range")

    @classmethod
    def constant(cls, k_p1: float, k_p2: float, k_r2: float, degree: int = 2) -> "StiffnessParams":
        pad = (0.0,) * degree
        return cls((k_p1, *pad), (k_p2, *pad), (k_r2, *pad), degree=degree)

    def scaled(self, factor: float) -> "StiffnessParams":
        f = float(factor)
        return StiffnessParams(
            tuple(f * v for v in self.a),
            tuple(f * v for v in self.b),
            tuple(f * v for v in self.c),
            degree=self.degree,
            check_range=self.check_range,
        )

    def to_dict(self) -> dict[str, Any]:
        # a and b act on a length: file units are mm, so a_i scales by 1e-3^i
        return {
            "degree": self.degree,
            "a_N_per_m": [v * MM**i for i, v in enumerate(self.a)],
            "b_N_per_m": [v * MM**i for i, v in enumerate(self.b)],
            "c_Nm_per_rad": list(self.c),
            "length_unit": "mm",
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StiffnessParams":
        a = [v / MM**i for i, v in enumerate(d["a_N_per_m"])]
        b = [v / MM**i for i, v in enumerate(d["b_N_per_m"])]
        return cls(tuple(a), tuple(b), tuple(d["c_Nm_per_rad"]), degree=int(d.get("degree", len(a) - 1)))


@dataclass(frozen=True)
class StopperDims:
    L_t: float = 75.9 * MM
    L_f: float = 45.2 * MM
    c: float = 4.8 * MM


@dataclass(frozen=True)
class ChainConfig:
    """Geometry, masses and cable layout of the hinge-beam chain (SI units).

    Each module joins two plates. The TwistBeam runs along the module axis
    (revolute, prismatic, revolute); two BendBeams sit at +/- ``beam_offset``
    and connect the plates' rotary shafts through passive hinges. The
    inner-side shaft distance is ``shaft_spacing`` when straight and
    ``limit_spacing`` at ``limit_angle``.
    """

    n_modules: int = 7
    shaft_spacing: float = 54.3 * MM
    limit_spacing: float = 44.1 * MM
    limit_angle: float = math.radians(45.0)
    beam_offset: float = 8.1 * MM
    char_radius: float = 27.15 * MM
    pulley_radius: float = 10.0 * MM
    total_mass: float = 0.21
    link_masses: tuple[float, ...] | None = None
    gravity: tuple[float, float, float] = GRAVITY_VERTICAL
    tip_payload: float = 0.0
    # (fraction along BendBeam, lateral offset away from the module axis), per module
    cable_site_offsets: tuple[tuple[float, float], ...] | None = None
    max_compression: float = 25 * MM
    stopper: StopperDims = field(default_factory=StopperDims)

    def __post_init__(self) -> None:
        if self.n_modules < 1:
            raise ConfigError("n_modules must be >= 1")
        for name in ("shaft_spacing", "limit_spacing", "beam_offset", "char_radius", "pulley_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.limit_angle < 0:
            raise ConfigError("limit_angle must be >= 0")
        if self.limit_spacing > self.shaft_spacing:
            raise ConfigError("limit_spacing exceeds shaft_spacing")
        if not self.limit_compression < self.max_compression:
            raise ConfigError(
                f"limit compression {self.limit_compression / MM:.2f} mm is not below the "
                f"{self.max_compression / MM:.1f} mm safe bound"
            )
        if self.limit_twist_shortening < -1e-12:
            raise ConfigError("beam_offset too large: stopper geometry needs TwistBeam extension")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        if self.link_masses is None:
            m = self.total_mass / (BODIES_PER_MODULE * self.n_modules)
            object.__setattr__(self, "link_masses", (m,) * (BODIES_PER_MODULE * self.n_modules))
        elif len(self.link_masses) != BODIES_PER_MODULE * self.n_modules:
            raise ConfigError(f"link_masses needs {BODIES_PER_MODULE * self.n_modules} entries")
        if self.cable_site_offsets is None:
            object.__setattr__(self, "cable_site_offsets", ((0.5, 0.0),) * self.n_modules)
        elif len(self.cable_site_offsets) != self.n_modules:
            raise ConfigError("cable_site_offsets needs one entry per module")

    @property
    def n_dof(self) -> int:
        return 11 * self.n_modules

    @property
    def limit_compression(self) -> float:
        """Shaft-spacing reduction at the limit pose (10.2 mm by default)."""
        return self.shaft_spacing - self.limit_spacing

    @property
    def limit_twist_shortening(self) -> float:
        """TwistBeam shortening implied by the stopper geometry at the limit pose."""
        return self.limit_compression - 2 * self.beam_offset * math.sin(self.limit_angle / 2)

    def replace(self, **changes: Any) -> "ChainConfig":
        from dataclasses import replace

        if "n_modules" in changes and "link_masses" not in changes:
            changes["link_masses"] = None
        if "n_modules" in changes and "cable_site_offsets" not in changes:
            changes["cable_site_offsets"] = None
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_modules": self.n_modules,
            "shaft_spacing_mm": self.shaft_spacing / MM,
            "limit_spacing_mm": self.limit_spacing / MM,
            "limit_angle_deg": math.degrees(self.limit_angle),
            "beam_offset_mm": self.beam_offset / MM,
            "char_radius_mm": self.char_radius / MM,
            "pulley_radius_mm": self.pulley_radius / MM,
            "link_masses_kg": list(self.link_masses),
            "gravity_m_s2": list(self.gravity),
            "tip_payload_kg": self.tip_payload,
            "cable_site_offsets": [[f, lat / MM] for f, lat in self.cable_site_offsets],
            "max_compression_mm": self.max_compression / MM,
            "stopper_mm": {
                "L_t": self.stopper.L_t / MM,
                "L_f": self.stopper.L_f / MM,
                "c": self.stopper.c / MM,
            },
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChainConfig":
        kw: dict[str, Any] = {}
        simple_mm = {
            "shaft_spacing_mm": "shaft_spacing",
            "limit_spacing_mm": "limit_spacing",
            "beam_offset_mm": "beam_offset",
            "char_radius_mm": "char_radius",
            "pulley_radius_mm": "pulley_radius",
            "max_compression_mm": "max_compression",
        }
        for key, attr in simple_mm.items():
            if key in d:
                kw[attr] = float(d[key]) * MM
        if "n_modules" in d:
            kw["n_modules"] = int(d["n_modules"])
        if "limit_angle_deg" in d:
            kw["limit_angle"] = math.radians(float(d["limit_angle_deg"]))
        if "total_mass_kg" in d:
            kw["total_mass"] = float(d["total_mass_kg"])
        if "link_masses_kg" in d:
            kw["link_masses"] = tuple(float(m) for m in d["link_masses_kg"])
        if "gravity_m_s2" in d:
            kw["gravity"] = tuple(float(g) for g in d["gravity_m_s2"])
        if "tip_payload_kg" in d:
            kw["tip_payload"] = float(d["tip_payload_kg"])
        if "cable_site_offsets" in d:
            kw["cable_site_offsets"] = tuple((float(f), float(lat) * MM) for f, lat in d["cable_site_offsets"])
        if "stopper_mm" in d:
            s = d["stopper_mm"]
            kw["stopper"] = StopperDims(s["L_t"] * MM, s["L_f"] * MM, s["c"] * MM)
        return cls(**kw)


def load_json(path: str | Path) -> dict[str, Any]:
    with open(path) as fh:
        return json.load(fh)


def load_config(path: str | Path) -> tuple[ChainConfig, StiffnessParams | None]:
    """Read a config document: chain fields at top level, optional ``stiffness`` block."""
    d = load_json(path)
    chain = ChainConfig.from_dict(d.get("chain", d))
    params = StiffnessParams.from_dict(d["stiffness"]) if "stiffness" in d else None
    return chain, params


def dump_config(cfg: ChainConfig, params: StiffnessParams | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {"chain": cfg.to_dict()}
    if params is not None:
        doc["stiffness"] = params.to_dict()
    return doc


def as_float_array(x: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)
