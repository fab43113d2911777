"""Tissue geometry and hemodynamics-driven absorption coefficients.

The world being simulated is a flat four-layer slab

    maternal abdominal wall | uterus | amniotic fluid | fetal tissue

stacked top to bottom, illuminated by a downward pencil beam at the origin
and observed by concentric annular detector rings on the top surface.

All lengths are millimetres and all coefficients mm^-1. Extinction
coefficients are expressed in mm^-1 per (g/L) of hemoglobin so that
``concentration * epsilon`` is directly an absorption coefficient.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

LAYER_NAMES = ("MaternalWall", "Uterus", "AmnioticFluid", "FetalTissue")
MATERNAL_WALL = 0
UTERUS = 1
AMNIOTIC_FLUID = 2
FETAL_TISSUE = 3

# Layers whose absorption is rebuilt from hemodynamics (wall and fetus).
PULSATILE_LAYERS = (MATERNAL_WALL, FETAL_TISSUE)

# Non-blood tissue baseline: BASELINE_SCALE * wavelength_nm ** BASELINE_EXPONENT,
# evaluated in cm^-1 and converted to mm^-1 (see baseline_mu_a).
BASELINE_SCALE = 7.84e7
BASELINE_EXPONENT = -3.255
CM_TO_MM = 0.1

# Fractional drop in fetal hemoglobin between systole and diastole.
DEFAULT_PULSATION_DELTA = 0.025


@dataclass(frozen=True)
class OpticalProperties:
    """Single-layer optical properties at one wavelength."""

    mu_a: float  # absorption, mm^-1
    mu_s: float  # scattering, mm^-1
    g: float  # scattering anisotropy, dimensionless
    n: float  # refractive index

    def validate(self, context: str = "") -> None:
        if self.mu_a < 0:
            raise ConfigError(f"{context}: mu_a must be >= 0, got {self.mu_a}")
        if self.mu_s < 0:
            raise ConfigError(f"{context}: mu_s must be >= 0, got {self.mu_s}")
        if not -1.0 < self.g < 1.0:
            raise ConfigError(f"{context}: anisotropy g must lie in (-1, 1), got {self.g}")
        if self.n < 1.0:
            raise ConfigError(f"{context}: refractive index must be >= 1, got {self.n}")


@dataclass(frozen=True)
class LayerSpec:
    """One slab layer: thickness plus per-wavelength optical properties."""

    name: str
    thickness: float  # mm; the fetal layer extends to the volume bottom
    optics: dict[float, OpticalProperties]

    def validate(self, wavelengths: tuple[float, ...]) -> None:
        if self.name not in LAYER_NAMES:
            raise ConfigError(f"unknown layer name {self.name!r}")
        if not self.thickness > 0:
            raise ConfigError(f"layer {self.name}: thickness must be > 0, got {self.thickness}")
        if set(self.optics) != set(wavelengths):
            raise ConfigError(
                f"layer {self.name}: optics must cover exactly the configured "
                f"wavelengths {sorted(wavelengths)}, got {sorted(self.optics)}"
            )
        for wl, props in self.optics.items():
            props.validate(f"layer {self.name} @ {wl}nm")

    def props(self, wavelength: float) -> OpticalProperties:
        try:
            return self.optics[wavelength]
        except KeyError:
            raise ConfigError(
                f"layer {self.name}: no optical properties for {wavelength}nm"
            ) from None


@dataclass(frozen=True)
class Hemodynamics:
    """Maternal and fetal hemoglobin state driving the pulsatile layers."""

    hb_m: float  # maternal hemoglobin, g/L
    s_m: float  # maternal arterial saturation, fraction
    hb_f: float  # fetal hemoglobin, g/L
    s_f: float  # fetal arterial saturation, fraction

    def validate(self) -> None:
        if self.hb_m <= 0 or self.hb_f <= 0:
            raise ConfigError("hemoglobin concentrations must be > 0")
        for label, s in (("maternal", self.s_m), ("fetal", self.s_f)):
            if not 0.0 <= s <= 1.0:
                raise ConfigError(f"{label} saturation must lie in [0, 1], got {s}")


@dataclass(frozen=True)
class ExtinctionTable:
    """Oxy/deoxy hemoglobin extinction per wavelength, mm^-1 per (g/L)."""

    coefficients: dict[float, tuple[float, float]]  # wavelength -> (eps_hbo, eps_hhb)

    def validate(self, wavelengths: tuple[float, ...]) -> None:
        missing = set(wavelengths) - set(self.coefficients)
        if missing:
            raise ConfigError(f"extinction table missing wavelengths {sorted(missing)}")
        for wl, (eps_hbo, eps_hhb) in self.coefficients.items():
            if eps_hbo <= 0 or eps_hhb <= 0:
                raise ConfigError(f"extinction coefficients at {wl}nm must be > 0")

    def lookup(self, wavelength: float) -> tuple[float, float]:
        try:
            return self.coefficients[wavelength]
        except KeyError:
            raise ConfigError(f"no extinction coefficients for {wavelength}nm") from None


@dataclass(frozen=True)
class DetectorRing:
    """Annular surface detector: all exits with ``|r - sdd| <= half_width``."""

    sdd: float  # mm, ring center radius
    half_width: float  # mm

    def validate(self) -> None:
        if self.sdd <= 0 or self.half_width <= 0:
            raise ConfigError("detector ring sdd and half_width must be > 0")


@dataclass(frozen=True)
class BloodModel:
    """Blood compartment assumptions for the pulsatile-layer absorption."""

    arterial_fraction: float = 0.05
    venous_fraction: float = 0.05
    venous_saturation_factor: float = 0.75  # venous sat = factor * arterial sat

    def validate(self) -> None:
        if self.arterial_fraction < 0 or self.venous_fraction < 0:
            raise ConfigError("blood volume fractions must be >= 0")
        if not 0.0 <= self.venous_saturation_factor <= 1.0:
            raise ConfigError("venous saturation factor must lie in [0, 1]")


@dataclass(frozen=True)
class TissueModel:
    """Four-layer slab plus source/detector geometry and sampling bounds."""

    layers: tuple[LayerSpec, ...]
    wavelengths: tuple[float, ...]
    detector_rings: tuple[DetectorRing, ...]
    lateral_halfwidth: float  # mm, photons escaping |x| or |y| beyond this are lost
    n_ambient: float = 1.0  # refractive index above the top surface
    path_cutoff_factor: float = 30.0  # cutoff = factor * total slab depth

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.wavelengths) == 0:
            raise ConfigError("at least one wavelength required")
        if len(set(self.wavelengths)) != len(self.wavelengths):
            raise ConfigError("duplicate wavelengths")
        if tuple(l.name for l in self.layers) != LAYER_NAMES:
            raise ConfigError(
                f"layers must be ordered {LAYER_NAMES}, got {tuple(l.name for l in self.layers)}"
            )
        for layer in self.layers:
            layer.validate(self.wavelengths)
        if not self.detector_rings:
            raise ConfigError("at least one detector ring required")
        sdds = [r.sdd for r in self.detector_rings]
        if any(b <= a for a, b in zip(sdds, sdds[1:])):
            raise ConfigError(f"detector SDDs must be strictly increasing, got {sdds}")
        for a, b in zip(self.detector_rings, self.detector_rings[1:]):
            if a.sdd + a.half_width >= b.sdd - b.half_width:
                raise ConfigError(
                    f"detector annuli at {a.sdd}mm and {b.sdd}mm overlap"
                )
        for ring in self.detector_rings:
            ring.validate()
            if ring.sdd + ring.half_width > self.lateral_halfwidth:
                raise ConfigError(
                    f"ring at {ring.sdd}mm exceeds lateral bounds "
                    f"({self.lateral_halfwidth}mm half-width)"
                )
        if self.lateral_halfwidth <= 0:
            raise ConfigError("lateral_halfwidth must be > 0")
        if self.n_ambient < 1.0:
            raise ConfigError("ambient refractive index must be >= 1")
        if self.path_cutoff_factor <= 0:
            raise ConfigError("path_cutoff_factor must be > 0")

    @property
    def d_m(self) -> float:
        """Maternal wall thickness (the geometry sweep parameter)."""
        return self.layers[MATERNAL_WALL].thickness

    @property
    def total_depth(self) -> float:
        return sum(l.thickness for l in self.layers)

    @property
    def path_cutoff(self) -> float:
        return self.path_cutoff_factor * self.total_depth

    @property
    def n_rings(self) -> int:
        return len(self.detector_rings)

    def sdds(self) -> np.ndarray:
        return np.array([r.sdd for r in self.detector_rings])

    def with_wall_thickness(self, d_m: float) -> "TissueModel":
        """Copy of this model with a different maternal wall thickness."""
        layers = list(self.layers)
        layers[MATERNAL_WALL] = replace(layers[MATERNAL_WALL], thickness=d_m)
        return replace(self, layers=tuple(layers))

    def layer_boundaries(self) -> np.ndarray:
        """Depths of the layer bottoms, length 4, increasing."""
        return np.cumsum([l.thickness for l in self.layers])

    def static_mu_a(self, wavelength: float) -> np.ndarray:
        """Per-layer mu_a vector as configured (the table-generating values)."""
        return np.array([l.props(wavelength).mu_a for l in self.layers])

    def content_hash(self) -> str:
        """Stable hash of everything that affects photon trajectories."""
        payload = {
            "layers": [
                {
                    "name": l.name,
                    "thickness": l.thickness,
                    "optics": {
                        str(wl): [p.mu_a, p.mu_s, p.g, p.n]
                        for wl, p in sorted(l.optics.items())
                    },
                }
                for l in self.layers
            ],
            "wavelengths": list(self.wavelengths),
            "rings": [[r.sdd, r.half_width] for r in self.detector_rings],
            "lateral_halfwidth": self.lateral_halfwidth,
            "n_ambient": self.n_ambient,
            "path_cutoff_factor": self.path_cutoff_factor,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def baseline_mu_a(wavelength: float) -> float:
    """Non-blood tissue absorption at ``wavelength`` nm, in mm^-1.

    The power law is calibrated in cm^-1 (skin-optics convention) and
    converted here.
    """
    return BASELINE_SCALE * wavelength ** BASELINE_EXPONENT * CM_TO_MM


def blood_mu_a(hb: float, sat: float, ext: ExtinctionTable, wavelength: float) -> float:
    """Whole-blood absorption: hb * (sat * eps_HbO + (1 - sat) * eps_HHb)."""
    if not 0.0 <= sat <= 1.0:
        raise ValueError(f"saturation must lie in [0, 1], got {sat}")
    if hb <= 0:
        raise ValueError(f"hemoglobin concentration must be > 0, got {hb}")
    eps_hbo, eps_hhb = ext.lookup(wavelength)
    return hb * (sat * eps_hbo + (1.0 - sat) * eps_hhb)


def pulsatile_tissue_mu_a(
    hemo: Hemodynamics,
    layer: int,
    wavelength: float,
    ext: ExtinctionTable,
    blood: BloodModel = BloodModel(),
    hb_override: float | None = None,
) -> float:
    """Overall absorption of a blood-perfused layer (wall or fetal tissue).

    Arterial and venous compartments contribute their volume fractions, the
    venous compartment at a reduced saturation, on top of the non-blood
    baseline. ``hb_override`` substitutes the layer's hemoglobin
    concentration (used for the pulsation states).
    """
    if layer not in PULSATILE_LAYERS:
        raise ValueError(
            f"layer {LAYER_NAMES[layer] if 0 <= layer < 4 else layer} is not pulsatile"
        )
    if layer == MATERNAL_WALL:
        hb, sat = hemo.hb_m, hemo.s_m
    else:
        hb, sat = hemo.hb_f, hemo.s_f
    if hb_override is not None:
        hb = hb_override
    if hb < 0:
        raise ValueError(f"hemoglobin concentration must be >= 0, got {hb}")
    if hb == 0.0:  # blood-free: baseline only
        arterial = venous = 0.0
    else:
        arterial = blood_mu_a(hb, sat, ext, wavelength)
        venous = blood_mu_a(hb, blood.venous_saturation_factor * sat, ext, wavelength)
    return (
        blood.arterial_fraction * arterial
        + blood.venous_fraction * venous
        + baseline_mu_a(wavelength)
    )


def hemodynamic_mu_a(
    model: TissueModel,
    hemo: Hemodynamics,
    wavelength: float,
    ext: ExtinctionTable,
    blood: BloodModel = BloodModel(),
    fetal_hb: float | None = None,
) -> np.ndarray:
    """Per-layer mu_a vector: hemodynamic wall/fetus, static middle layers."""
    mu = model.static_mu_a(wavelength)
    mu[MATERNAL_WALL] = pulsatile_tissue_mu_a(hemo, MATERNAL_WALL, wavelength, ext, blood)
    mu[FETAL_TISSUE] = pulsatile_tissue_mu_a(
        hemo, FETAL_TISSUE, wavelength, ext, blood, hb_override=fetal_hb
    )
    return mu


def systole_diastole_pair(
    model: TissueModel,
    hemo: Hemodynamics,
    wavelength: float,
    ext: ExtinctionTable,
    blood: BloodModel = BloodModel(),
    pulsation_delta: float = DEFAULT_PULSATION_DELTA,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer mu_a vectors at the fetal systole and diastole extremes.

    Only the fetal entry differs: systole uses the full fetal hemoglobin
    concentration, diastole ``hb_f * (1 - pulsation_delta)``. Geometry and
    scattering are held fixed across the pair.
    """
    hemo.validate()
    if not 0.0 <= pulsation_delta < 1.0:
        raise ConfigError(f"pulsation delta must lie in [0, 1), got {pulsation_delta}")
    systole = hemodynamic_mu_a(model, hemo, wavelength, ext, blood)
    diastole = hemodynamic_mu_a(
        model, hemo, wavelength, ext, blood,
        fetal_hb=hemo.hb_f * (1.0 - pulsation_delta),
    )
    return systole, diastole


# Shipped default profile. The scattering/static-absorption magnitudes follow
# published NIR tissue ranges and are placeholders meant to be overridden by
# configuration; the extinction values derive from standard hemoglobin
# spectra converted to mm^-1 per (g/L).
DEFAULT_WAVELENGTHS = (735.0, 850.0)

DEFAULT_EXTINCTION = ExtinctionTable(
    coefficients={
        735.0: (1.43e-3, 3.84e-3),
        850.0: (3.78e-3, 2.47e-3),
    }
)


def default_layers(
    d_m: float = 20.0,
    uterus: float = 7.0,
    amniotic: float = 5.0,
    fetal: float = 60.0,
) -> tuple[LayerSpec, ...]:
    def optics(mu_a_by_wl, mu_s_by_wl, g, n):
        return {
            wl: OpticalProperties(mu_a=mu_a_by_wl[i], mu_s=mu_s_by_wl[i], g=g, n=n)
            for i, wl in enumerate(DEFAULT_WAVELENGTHS)
        }

    return (
        LayerSpec("MaternalWall", d_m, optics([0.0091, 0.0087], [9.0, 8.0], 0.9, 1.4)),
        LayerSpec("Uterus", uterus, optics([0.012, 0.010], [8.0, 7.0], 0.9, 1.4)),
        LayerSpec("AmnioticFluid", amniotic, optics([0.0024, 0.0042], [0.1, 0.1], 0.9, 1.33)),
        LayerSpec("FetalTissue", fetal, optics([0.011, 0.0105], [10.0, 9.0], 0.9, 1.4)),
    )


def default_rings(
    sdds=(15.0, 33.0, 46.0, 68.0, 94.0), half_width: float = 1.0
) -> tuple[DetectorRing, ...]:
    return tuple(DetectorRing(sdd=s, half_width=half_width) for s in sdds)


def default_model(d_m: float = 20.0) -> TissueModel:
    return TissueModel(
        layers=default_layers(d_m=d_m),
        wavelengths=DEFAULT_WAVELENGTHS,
        detector_rings=default_rings(),
        lateral_halfwidth=150.0,
    )
