"""Point clouds, synthetic manifold generators and point-cloud file formats.

All generators draw from ``numpy.random.default_rng(seed)`` (PCG64), so a
given :class:`GeneratorSpec` yields the same cloud on every platform.

Binary cloud layout (all little-endian)::

    bytes 0..7    magic  b"GMRAPC01"
    bytes 8..15   uint64 n (rows)
    bytes 16..23  uint64 D (columns)
    bytes 24..    n*D float64, row-major
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SpecError

CLOUD_MAGIC = b"GMRAPC01"

SWISS_ROLL = "swissroll"
S_MANIFOLD = "smanifold"
OSCILLATING_WAVE = "oscillating2dwave"
NOISY_SPHERE = "sphere"
BAND_LIMITED = "bandlimited"
KINDS = (SWISS_ROLL, S_MANIFOLD, OSCILLATING_WAVE, NOISY_SPHERE, BAND_LIMITED)

# Oscillating2DWave: (u, v, A sin(omega u)) on [0, 1]^2; curvature A omega^2 |sin|
# sweeps from 0 to its maximum across the domain.
WAVE_AMPLITUDE = 0.2
WAVE_FREQUENCY = 2.0 * math.pi


@dataclass
class PointCloud:
    coords: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if not np.isfinite(self.coords).all():
            raise ValueError("point cloud contains NaN or Inf")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.n


@dataclass
class GeneratorSpec:
    """Parameters of a synthetic data set.

    ``dim`` is the sphere dimension for ``"sphere"``. For ``"bandlimited"``,
    ``band_width`` frequencies share one amplitude band and there are
    ``n_bands`` bands, so frequencies ``0 .. band_width*n_bands - 1`` are used
    and ``D`` is the number of grid samples of each function.

    ``seed`` drives the samples and the noise; ``embed_seed`` alone fixes the
    isometric embedding, so clouds with different seeds share one manifold.
    """

    kind: str
    n: int
    D: int
    sigma: float = 0.0
    seed: int = 0
    dim: int = 2
    band_width: int = 4
    n_bands: int = 4
    alpha: float = 1.0
    embed_seed: int = 0

    def intrinsic_dim(self) -> int:
        if self.kind == NOISY_SPHERE:
            return self.dim
        if self.kind == BAND_LIMITED:
            return self.band_width * self.n_bands
        return 2

    def canonical_dim(self) -> int:
        if self.kind == NOISY_SPHERE:
            return self.dim + 1
        if self.kind == BAND_LIMITED:
            return self.D
        return 3

    def validate(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown generator kind {self.kind!r}")
        if self.n < 1:
            raise SpecError("n must be >= 1")
        if self.sigma < 0:
            raise SpecError("sigma must be >= 0")
        if self.D < self.canonical_dim():
            raise SpecError(f"D={self.D} below the dimension required by {self.kind}")
        if self.kind == BAND_LIMITED and self.D < 2 * self.band_width * self.n_bands:
            raise SpecError("bandlimited grid too coarse for the highest frequency")


def swiss_roll(t, h):
    return np.column_stack([t * np.cos(t), h, t * np.sin(t)])


def s_manifold(t, h):
    return np.column_stack([np.sin(t), h, np.sign(t) * (np.cos(t) - 1.0)])


def oscillating_wave(u, v):
    return np.column_stack([u, v, WAVE_AMPLITUDE * np.sin(WAVE_FREQUENCY * u)])


def random_isometry(D: int, k: int, rng) -> np.ndarray:
    """A (D, k) matrix with orthonormal columns."""
    q, r = np.linalg.qr(rng.standard_normal((D, k)))
    return q * np.sign(np.diag(r))


def band_means(spec: GeneratorSpec) -> np.ndarray:
    freqs = np.arange(spec.band_width * spec.n_bands)
    return 2.0 ** (-(freqs // spec.band_width) * spec.alpha)


def canonical_sample(spec: GeneratorSpec, rng) -> tuple[np.ndarray, dict]:
    """Noise-free samples in the low-dimensional canonical coordinates."""
    n = spec.n
    if spec.kind == SWISS_ROLL:
        t = rng.uniform(1.5 * math.pi, 4.5 * math.pi, n)
        h = rng.uniform(0.0, 21.0, n)
        return swiss_roll(t, h), {"t": t, "h": h}
    if spec.kind == S_MANIFOLD:
        t = rng.uniform(-1.5 * math.pi, 1.5 * math.pi, n)
        h = rng.uniform(0.0, 2.0, n)
        return s_manifold(t, h), {"t": t, "h": h}
    if spec.kind == OSCILLATING_WAVE:
        u = rng.uniform(0.0, 1.0, n)
        v = rng.uniform(0.0, 1.0, n)
        return oscillating_wave(u, v), {"u": u, "v": v}
    if spec.kind == NOISY_SPHERE:
        g = rng.standard_normal((n, spec.dim + 1))
        return g / np.linalg.norm(g, axis=1, keepdims=True), {}
    means = band_means(spec)
    a = means + rng.standard_normal((n, means.size)) * means / 5.0
    grid = 2.0 * math.pi * np.arange(spec.D) / spec.D
    waves = np.cos(np.outer(np.arange(means.size), grid))
    return a @ waves, {"amplitudes": a}


def generate(spec: GeneratorSpec, *, return_latent: bool = False):
    """Sample a synthetic cloud, embed it isometrically in R^D, add noise.

    Manifold samples are uniform in the parameter domain; the canonical
    coordinates are mapped to R^D by a seeded random isometry. Gaussian noise
    with per-coordinate standard deviation ``sigma / sqrt(D)`` is then added.
    Band-limited functions are sampled on a fixed grid and not rotated.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    canon, latent = canonical_sample(spec, rng)
    if spec.kind == BAND_LIMITED:
        embedding = np.eye(spec.D)
        coords = canon
    else:
        embedding = random_isometry(spec.D, canon.shape[1], np.random.default_rng(spec.embed_seed))
        coords = canon @ embedding.T
    if spec.sigma > 0:
        coords = coords + rng.standard_normal(coords.shape) * (spec.sigma / math.sqrt(spec.D))
    cloud = PointCloud(coords, label=spec.kind, meta={"spec": spec.__dict__.copy()})
    if return_latent:
        latent = dict(latent, canonical=canon, embedding=embedding)
        return cloud, latent
    return cloud


# -- file formats --------------------------------------------------------

def save_cloud(cloud, path, fmt: str = "csv"):
    X = np.asarray(getattr(cloud, "coords", cloud), dtype=float)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in X:
                writer.writerow([repr(float(v)) for v in row])
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(CLOUD_MAGIC)
            fh.write(struct.pack("<QQ", X.shape[0], X.shape[1]))
            fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _parse_row(row, lineno):
    try:
        values = [float(v) for v in row]
    except ValueError as exc:
        raise ParseError(f"non-numeric value ({exc})", lineno) from None
    if not all(math.isfinite(v) for v in values):
        raise ParseError("NaN or Inf value", lineno)
    return values


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    """Read a cloud from CSV (optional header row) or the binary format."""
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(8) == CLOUD_MAGIC else "csv"
    if fmt == "binary":
        with open(path, "rb") as fh:
            if fh.read(8) != CLOUD_MAGIC:
                raise ParseError("bad magic in binary cloud file")
            n, D = struct.unpack("<QQ", fh.read(16))
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != n * D:
            raise ParseError(f"expected {n * D} values, found {data.size}")
        X = data.reshape(n, D).astype(float)
        if not np.isfinite(X).all():
            bad = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise ParseError("NaN or Inf value", bad + 1)
        return PointCloud(X, label=str(path))
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not rows:
                try:
                    float(row[0])
                except ValueError:
                    continue  # header
            values = _parse_row(row, lineno)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(f"expected {width} columns, found {len(values)}", lineno)
            rows.append(values)
    if not rows:
        raise ParseError("no data rows")
    return PointCloud(np.array(rows), label=str(path))
