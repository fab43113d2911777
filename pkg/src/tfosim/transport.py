"""Monte Carlo photon transport through the layered slab.

Free paths are sampled from the scattering coefficient alone; absorption
never terminates a photon and is applied analytically later from the
recorded per-layer pathlengths (see :mod:`tfosim.replay`). That
factorization is what makes the stored tables replayable for arbitrary
absorption vectors.

Determinism contract: photon ``i`` consumes uniforms exclusively from the
``(seed, i)`` Philox substream, in this fixed order:

1. one draw for each new free path (skipped while traversing a layer with
   ``mu_s == 0``, where propagation is ballistic),
2. two draws per scattering event (deflection cosine, then azimuth),
3. one draw per interface hit where the Fresnel reflectance is strictly
   between 0 and 1 (no draw on matched indices or total internal
   reflection).

Remaining optical depth is carried across layer interfaces (rescaled by the
local ``mu_s``), positions are snapped exactly onto boundary planes, and
directions are renormalized after every scattering event. A scalar
re-implementation following these rules reproduces the kernel bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from numba import prange

from .errors import ConfigError, EmptyRingError
from .rng import philox_block, u01
from .tissue import FETAL_TISSUE, TissueModel

# Smallest uniform substituted when a draw returns exactly 0 (log safety).
_TINY_U = 2.0 ** -53

# |cos(theta)| above which the incoming direction is treated as z-aligned
# when building the scattering rotation frame.
_COS_NEAR_AXIAL = 1.0 - 1e-12

DEFAULT_CHUNK = 1 << 20


# ---------------------------------------------------------------------------
# Elementary samplers (shared by the kernel and the public operations)
# ---------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _free_path(mu_s, u):
    return -math.log(u) / mu_s


@numba.njit(cache=True, inline="always")
def _hg_cos(g, u1):
    """Henyey-Greenstein deflection cosine; isotropic at g == 0."""
    if abs(g) < 1e-12:
        return 2.0 * u1 - 1.0
    s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u1)
    cost = (1.0 + g * g - s * s) / (2.0 * g)
    if cost > 1.0:
        cost = 1.0
    elif cost < -1.0:
        cost = -1.0
    return cost


@numba.njit(cache=True, inline="always")
def _rotate(ux, uy, uz, cost, psi):
    """Deflect (ux, uy, uz) by cos(theta)=cost with azimuth psi; renormalize."""
    sint = math.sqrt(max(0.0, 1.0 - cost * cost))
    cosp = math.cos(psi)
    sinp = math.sin(psi)
    if abs(uz) > _COS_NEAR_AXIAL:
        nx = sint * cosp
        ny = sint * sinp
        nz = cost if uz >= 0.0 else -cost
    else:
        tmp = math.sqrt(1.0 - uz * uz)
        nx = sint * (ux * uz * cosp - uy * sinp) / tmp + ux * cost
        ny = sint * (uy * uz * cosp + ux * sinp) / tmp + uy * cost
        nz = -sint * cosp * tmp + uz * cost
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / norm, ny / norm, nz / norm


@numba.njit(cache=True, inline="always")
def _fresnel(n1, n2, cos_i):
    """Unpolarized Fresnel reflectance and transmitted cosine.

    Returns (R, cos_t); total internal reflection yields (1.0, 0.0).
    """
    eta = n1 / n2
    sin2_t = eta * eta * (1.0 - cos_i * cos_i)
    if sin2_t >= 1.0:
        return 1.0, 0.0
    cos_t = math.sqrt(1.0 - sin2_t)
    rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    rp = (n1 * cos_t - n2 * cos_i) / (n1 * cos_t + n2 * cos_i)
    return 0.5 * (rs * rs + rp * rp), cos_t


def sample_free_path(mu_s: float, u: float) -> float:
    """Exponential free path ``-ln(u)/mu_s`` in mm.

    ``mu_s == 0`` returns infinity (ballistic segment to the next boundary).
    """
    if mu_s < 0:
        raise ValueError(f"mu_s must be >= 0, got {mu_s}")
    if mu_s == 0.0:
        return math.inf
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly in (0, 1), got {u}")
    return _free_path(mu_s, u)


def sample_scatter_direction(
    g: float, u1: float, u2: float, incoming: np.ndarray
) -> np.ndarray:
    """New unit direction after a Henyey-Greenstein scattering event."""
    if not -1.0 < g < 1.0:
        raise ValueError(f"anisotropy g must lie in (-1, 1), got {g}")
    ux, uy, uz = float(incoming[0]), float(incoming[1]), float(incoming[2])
    norm = math.sqrt(ux * ux + uy * uy + uz * uz)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("incoming direction must be normalized")
    cost = _hg_cos(g, u1)
    psi = 2.0 * math.pi * u2
    return np.array(_rotate(ux, uy, uz, cost, psi))


def fresnel_reflectance(n1: float, n2: float, cos_i: float) -> tuple[float, float]:
    """Public wrapper over the interface reflectance used by the kernel."""
    if n1 < 1.0 or n2 < 1.0 or not 0.0 < cos_i <= 1.0:
        raise ValueError("need n1, n2 >= 1 and 0 < cos_i <= 1")
    return _fresnel(n1, n2, cos_i)


# ---------------------------------------------------------------------------
# Transport kernel
# ---------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _next_word(pos, ctr, b0, b1, b2, b3, k0, k1):
    if pos == 4:
        ctr = ctr + np.uint64(1)
        b0, b1, b2, b3 = philox_block(
            ctr, np.uint64(0), np.uint64(0), np.uint64(0), k0, k1
        )
        pos = 0
    if pos == 0:
        w = b0
    elif pos == 1:
        w = b1
    elif pos == 2:
        w = b2
    else:
        w = b3
    return u01(w), pos + 1, ctr, b0, b1, b2, b3


@numba.njit(cache=True, parallel=True)
def _transport_chunk(
    first_index,
    n,
    seed,
    z_top,
    z_bot,
    mu_s,
    g,
    n_layer,
    n_ambient,
    halfwidth,
    ring_lo,
    ring_hi,
    cutoff,
    out_det,
    out_len,
):
    n_layers = z_bot.shape[0]
    n_rings = ring_lo.shape[0]
    for i in prange(n):
        k0 = np.uint64(seed)
        k1 = np.uint64(first_index + i)
        ctr = np.uint64(0)
        b0 = np.uint64(0)
        b1 = np.uint64(0)
        b2 = np.uint64(0)
        b3 = np.uint64(0)
        pos = 4

        x = 0.0
        y = 0.0
        z = 0.0
        ux = 0.0
        uy = 0.0
        uz = 1.0
        layer = 0
        tau = 0.0  # remaining optical depth (in scattering MFPs)
        total = 0.0
        det = -1
        l0 = 0.0
        l1 = 0.0
        l2 = 0.0
        l3 = 0.0

        alive = True
        while alive:
            ms = mu_s[layer]
            if tau == 0.0 and ms > 0.0:
                u, pos, ctr, b0, b1, b2, b3 = _next_word(pos, ctr, b0, b1, b2, b3, k0, k1)
                if u <= 0.0:
                    u = _TINY_U
                tau = -math.log(u)

            # distance to the layer boundary along the current direction
            if uz > 0.0:
                db = (z_bot[layer] - z) / uz
            elif uz < 0.0:
                db = (z_top[layer] - z) / (-uz)
            else:
                db = math.inf

            step = tau / ms if ms > 0.0 else math.inf

            if step < db:
                # interaction inside the layer
                x += step * ux
                y += step * uy
                z += step * uz
                if layer == 0:
                    l0 += step
                elif layer == 1:
                    l1 += step
                elif layer == 2:
                    l2 += step
                else:
                    l3 += step
                total += step
                tau = 0.0
                if abs(x) > halfwidth or abs(y) > halfwidth or total > cutoff:
                    alive = False
                    continue
                u1, pos, ctr, b0, b1, b2, b3 = _next_word(pos, ctr, b0, b1, b2, b3, k0, k1)
                u2, pos, ctr, b0, b1, b2, b3 = _next_word(pos, ctr, b0, b1, b2, b3, k0, k1)
                cost = _hg_cos(g[layer], u1)
                psi = 2.0 * math.pi * u2
                ux, uy, uz = _rotate(ux, uy, uz, cost, psi)
                continue

            # boundary hit: advance and snap exactly onto the plane
            x += db * ux
            y += db * uy
            z = z_bot[layer] if uz > 0.0 else z_top[layer]
            if layer == 0:
                l0 += db
            elif layer == 1:
                l1 += db
            elif layer == 2:
                l2 += db
            else:
                l3 += db
            total += db
            if ms > 0.0:
                tau -= db * ms
                if tau < 0.0:
                    tau = 0.0
            if abs(x) > halfwidth or abs(y) > halfwidth or total > cutoff:
                alive = False
                continue

            if uz > 0.0:
                # downward crossing
                if layer == n_layers - 1:
                    alive = False  # escaped through the volume bottom
                    continue
                n1 = n_layer[layer]
                n2 = n_layer[layer + 1]
                if n1 == n2:
                    layer += 1
                    continue
                refl, cos_t = _fresnel(n1, n2, uz)
                if refl >= 1.0:
                    uz = -uz
                    continue
                uf, pos, ctr, b0, b1, b2, b3 = _next_word(pos, ctr, b0, b1, b2, b3, k0, k1)
                if uf > refl:
                    eta = n1 / n2
                    ux *= eta
                    uy *= eta
                    uz = cos_t
                    norm = math.sqrt(ux * ux + uy * uy + uz * uz)
                    ux /= norm
                    uy /= norm
                    uz /= norm
                    layer += 1
                else:
                    uz = -uz
            else:
                # upward crossing
                n1 = n_layer[layer]
                n2 = n_ambient if layer == 0 else n_layer[layer - 1]
                if n1 == n2:
                    transmit = True
                    cos_t = -uz
                else:
                    refl, cos_t = _fresnel(n1, n2, -uz)
                    if refl >= 1.0:
                        transmit = False
                    else:
                        uf, pos, ctr, b0, b1, b2, b3 = _next_word(
                            pos, ctr, b0, b1, b2, b3, k0, k1
                        )
                        transmit = uf > refl
                if not transmit:
                    uz = -uz
                    continue
                if layer == 0:
                    # re-emerged through the top surface: tally by exit radius
                    r = math.sqrt(x * x + y * y)
                    for k in range(n_rings):
                        if ring_lo[k] <= r <= ring_hi[k]:
                            det = k
                            break
                    alive = False
                    continue
                eta = n1 / n2
                ux *= eta
                uy *= eta
                uz = -cos_t
                norm = math.sqrt(ux * ux + uy * uy + uz * uz)
                ux /= norm
                uy /= norm
                uz /= norm
                layer -= 1

        out_det[i] = det
        out_len[i, 0] = l0
        out_len[i, 1] = l1
        out_len[i, 2] = l2
        out_len[i, 3] = l3


@numba.njit(cache=True)
def _direct_tally(det, lengths, mu, n_rings):
    """Sequential per-ring weight tally at a fixed absorption vector.

    Scalar arithmetic in photon-index order; kept independent of the
    vectorized replay path so the two can cross-check each other.
    """
    tally = np.zeros(n_rings)
    for i in range(det.shape[0]):
        s = mu[0] * lengths[i, 0]
        s += mu[1] * lengths[i, 1]
        s += mu[2] * lengths[i, 2]
        s += mu[3] * lengths[i, 3]
        tally[det[i]] += math.exp(-s)
    return tally


# ---------------------------------------------------------------------------
# Pathlength table
# ---------------------------------------------------------------------------


@dataclass
class PathlengthTable:
    """Per-photon partial pathlengths and ring assignment for one run.

    Only detected photons are stored; rows are ordered by launch index.
    ``direct_tally`` holds the per-ring weighted intensity accumulated at
    the generating absorption vector while the table was built.
    """

    photon_index: np.ndarray  # u8, sorted
    detector_id: np.ndarray  # i4
    pathlengths: np.ndarray  # (n, 4) f8, per-layer geometric mm
    n_launched: int
    seed: int
    wavelength: float
    model_hash: str
    ring_sdds: np.ndarray
    ring_half_widths: np.ndarray
    generating_mu_a: np.ndarray  # per-layer mm^-1 used for the direct tally
    direct_tally: np.ndarray  # per-ring summed weights (not normalized)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = len(self.photon_index)
        if len(self.detector_id) != n or self.pathlengths.shape != (n, 4):
            raise ConfigError("table row arrays are inconsistent")
        if n > self.n_launched:
            raise ConfigError("more detected rows than launched photons")
        if n and np.any(np.diff(self.photon_index.astype(np.int64)) <= 0):
            raise ConfigError("table rows must be strictly increasing in photon_index")
        if n and (self.detector_id.min() < 0 or self.detector_id.max() >= self.n_rings):
            raise ConfigError("detector ids out of range")
        if np.any(self.pathlengths < 0):
            raise ConfigError("pathlengths must be >= 0")

    @property
    def n_detected(self) -> int:
        return len(self.photon_index)

    @property
    def n_rings(self) -> int:
        return len(self.ring_sdds)

    def ring_counts(self) -> np.ndarray:
        return np.bincount(self.detector_id, minlength=self.n_rings).astype(np.int64)

    def ring_rows(self, ring: int) -> np.ndarray:
        """Row selector for one ring (boolean mask)."""
        if not 0 <= ring < self.n_rings:
            raise ValueError(f"ring {ring} out of range")
        return self.detector_id == ring


def simulate(
    model: TissueModel,
    wavelength: float,
    n_photons: int,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK,
) -> PathlengthTable:
    """Run the photon random walk and collect the pathlength table.

    Output is a pure function of ``(model, wavelength, n_photons, seed)``
    and is bit-identical for any worker count or chunk size.
    """
    model.validate()
    if wavelength not in model.wavelengths:
        raise ConfigError(f"wavelength {wavelength} not configured on the model")
    if n_photons < 1:
        raise ValueError("n_photons must be >= 1")
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")

    bounds = model.layer_boundaries()
    z_bot = bounds.astype(np.float64)
    z_top = np.concatenate(([0.0], bounds[:-1])).astype(np.float64)
    mu_s = np.array([l.props(wavelength).mu_s for l in model.layers])
    g = np.array([l.props(wavelength).g for l in model.layers])
    n_layer = np.array([l.props(wavelength).n for l in model.layers])
    ring_lo = np.array([r.sdd - r.half_width for r in model.detector_rings])
    ring_hi = np.array([r.sdd + r.half_width for r in model.detector_rings])

    idx_parts = []
    det_parts = []
    len_parts = []
    start = 0
    while start < n_photons:
        n = min(chunk_size, n_photons - start)
        out_det = np.full(n, -1, dtype=np.int32)
        out_len = np.zeros((n, 4))
        _transport_chunk(
            np.uint64(start),
            n,
            np.uint64(seed),
            z_top,
            z_bot,
            mu_s,
            g,
            n_layer,
            float(model.n_ambient),
            float(model.lateral_halfwidth),
            ring_lo,
            ring_hi,
            float(model.path_cutoff),
            out_det,
            out_len,
        )
        hit = out_det >= 0
        idx_parts.append(np.nonzero(hit)[0].astype(np.uint64) + np.uint64(start))
        det_parts.append(out_det[hit])
        len_parts.append(out_len[hit])
        start += n

    photon_index = np.concatenate(idx_parts)
    detector_id = np.concatenate(det_parts)
    pathlengths = np.concatenate(len_parts) if len_parts else np.zeros((0, 4))
    generating_mu = model.static_mu_a(wavelength)
    tally = _direct_tally(detector_id, pathlengths, generating_mu, model.n_rings)

    return PathlengthTable(
        photon_index=photon_index,
        detector_id=detector_id,
        pathlengths=pathlengths,
        n_launched=n_photons,
        seed=seed,
        wavelength=wavelength,
        model_hash=model.content_hash(),
        ring_sdds=model.sdds(),
        ring_half_widths=np.array([r.half_width for r in model.detector_rings]),
        generating_mu_a=generating_mu,
        direct_tally=tally,
    )


def pathlength_stats(table: PathlengthTable, ring: int) -> dict[str, dict[str, float]]:
    """Quartile boundaries and mean of total and fetal pathlength in a ring.

    Quartile boundaries are the 25/50/75/100th percentiles (linear
    interpolation), keyed q1..q4.
    """
    mask = table.ring_rows(ring)
    if not mask.any():
        raise EmptyRingError(f"ring {ring} holds no detected photons")
    rows = table.pathlengths[mask]
    out = {}
    for key, values in (("total", rows.sum(axis=1)), ("fetal", rows[:, FETAL_TISSUE])):
        q1, q2, q3, q4 = np.percentile(values, [25.0, 50.0, 75.0, 100.0])
        out[key] = {
            "q1": float(q1),
            "q2": float(q2),
            "q3": float(q3),
            "q4": float(q4),
            "mean": float(values.mean()),
        }
    return out
