"""Generator abstraction: latent spaces, mapping and synthesis networks.

Two implementations. ``LinearPlantedGenerator`` is a reference decoder with
known, orthogonal attribute directions planted on dedicated spectrogram
regions; every latent-algebra result downstream can be verified against it
exactly. ``ExternalGenerator`` adapts an externally trained model over a
line-delimited subprocess protocol, so a real network can replace the
reference without touching callers.
"""

from __future__ import annotations

import select
import subprocess
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import FLOOR_DB, Spectrogram, StftParams
from .gaver import ATTRIBUTES, BRIGHT_BAND, FILL_SWEEP, IMPACT_BAND, RATE_BAND
from .tensorio import tensor_from_bytes, tensor_to_bytes

DEFAULT_LATENT_DIM = 128
BIAS_LEVEL_DB = -70.0  # quiet pedestal keeps prior samples off the clamp

Z, W = "z", "w"


@dataclass(frozen=True)
class LatentVector:
    """Point in the z (prior) or w (disentangled) space."""

    values: np.ndarray
    space: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("latent vector must be 1-D")
        if not np.all(np.isfinite(values)):
            raise ValueError("latent vector must be finite")
        if self.space not in (Z, W):
            raise ValueError("space must be 'z' or 'w'")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.values)


def _require_space(vec: LatentVector, space: str):
    if vec.space != space:
        raise ValueError(f"expected a {space}-space vector, got {vec.space}-space")


def params_for_shape(shape) -> StftParams:
    """StftParams whose analysis grid matches a (bins, frames) shape."""
    f, t = shape
    return StftParams(stft_channels=2 * f, hop_size=max(f // 2, 1), n_frames=t)


class GeneratorHandle:
    """Common surface of all generators."""

    kind = "abstract"

    @property
    def dim_z(self) -> int:
        raise NotImplementedError

    @property
    def dim_w(self) -> int:
        raise NotImplementedError

    @property
    def spec_shape(self):
        raise NotImplementedError

    def sample_z(self, seed) -> LatentVector:
        rng = np.random.default_rng(seed)
        return LatentVector(rng.standard_normal(self.dim_z), Z)

    def map_latent(self, z: LatentVector) -> LatentVector:
        raise NotImplementedError

    def synthesize(self, w: LatentVector) -> Spectrogram:
        raise NotImplementedError

    @property
    def w_avg(self) -> LatentVector:
        raise NotImplementedError

    def estimate_w_avg(self, n_samples: int = 10000, seed=0) -> LatentVector:
        """Monte-Carlo centre of mass of the w space."""
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        rng = np.random.default_rng(seed)
        acc = np.zeros(self.dim_w)
        for _ in range(n_samples):
            z = LatentVector(rng.standard_normal(self.dim_z), Z)
            acc += self.map_latent(z).values
        return LatentVector(acc / n_samples, W)


def sample_z(gen: GeneratorHandle, seed) -> LatentVector:
    return gen.sample_z(seed)


def map_latent(gen: GeneratorHandle, z: LatentVector) -> LatentVector:
    return gen.map_latent(z)


def synthesize(gen: GeneratorHandle, w: LatentVector) -> Spectrogram:
    return gen.synthesize(w)


def estimate_w_avg(gen: GeneratorHandle, n_samples: int = 10000, seed=0) -> LatentVector:
    return gen.estimate_w_avg(n_samples, seed)


@dataclass(frozen=True)
class PlantedConfig:
    """Everything defining a linear planted generator.

    ``basis`` has one flattened spectrogram template per w coordinate
    (cells x dim_w); ``mapping``/``offset`` form the affine z->w map;
    ``directions`` names the planted unit vectors.
    """

    basis: np.ndarray
    bias: np.ndarray
    mapping: np.ndarray
    offset: np.ndarray
    shape: tuple
    directions: dict
    seed: int = 0

    def __post_init__(self):
        for name, vec in self.directions.items():
            norm = np.linalg.norm(vec)
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"planted direction {name} is not unit length")


class LinearPlantedGenerator(GeneratorHandle):
    """Linear decoder over spectrogram templates with planted directions."""

    kind = "planted"

    def __init__(self, config: PlantedConfig):
        self.config = config
        self._basis = np.ascontiguousarray(config.basis)
        self._bias = config.bias
        self._mapping = config.mapping
        self._offset = config.offset
        self._shape = tuple(config.shape)
        self._gram = None
        self._pinv = None
        self._lock = threading.Lock()
        self.stft_params = params_for_shape(self._shape)

    @property
    def dim_z(self):
        return self._mapping.shape[1]

    @property
    def dim_w(self):
        return self._mapping.shape[0]

    @property
    def spec_shape(self):
        return self._shape

    @property
    def w_avg(self) -> LatentVector:
        # exact centre of mass: E[M z + b] = b
        return LatentVector(self._offset.copy(), W)

    def map_latent(self, z: LatentVector) -> LatentVector:
        _require_space(z, Z)
        return LatentVector(self._mapping @ z.values + self._offset, W)

    def decode_unclamped(self, w_values: np.ndarray) -> np.ndarray:
        return (self._bias + self._basis @ w_values).reshape(self._shape)

    def synthesize(self, w: LatentVector) -> Spectrogram:
        _require_space(w, W)
        values = np.clip(self.decode_unclamped(w.values), FLOOR_DB, 0.0)
        return Spectrogram(values, self.stft_params)

    @property
    def basis_matrix(self) -> np.ndarray:
        """Decoder weights (cells x dim_w); also the SeFa factorization target."""
        return self._basis

    @property
    def bias_flat(self) -> np.ndarray:
        return self._bias

    @property
    def gram(self) -> np.ndarray:
        with self._lock:
            if self._gram is None:
                self._gram = self._basis.T @ self._basis
            return self._gram

    def solve_least_squares(self, target_flat: np.ndarray) -> np.ndarray:
        """Exact minimizer of ||(s - bias) - B w||^2 via the normal equations."""
        with self._lock:
            if self._pinv is None:
                gram = self._basis.T @ self._basis
                cond = np.linalg.cond(gram)
                if not np.isfinite(cond) or cond > 1e12:
                    raise np.linalg.LinAlgError("rank-deficient basis")
                self._pinv = np.linalg.inv(gram) @ self._basis.T
                self._gram = gram
        return self._pinv @ (target_flat - self._bias)

    def planted_direction(self, attribute: str) -> np.ndarray:
        return self.config.directions[attribute]


def _row_of(freq_hz, shape=(256, 256), sample_rate=16000, channels=512):
    return freq_hz * channels / sample_rate


def _freq_ridge(center_hz, sigma_rows=1.5, n_rows=256):
    rows = np.arange(n_rows)
    return np.exp(-0.5 * ((rows - _row_of(center_hz)) / sigma_rows) ** 2)


def _smooth_band(lo_hz, hi_hz, edge_rows=2.0, n_rows=256):
    rows = np.arange(n_rows)
    lo, hi = _row_of(lo_hz), _row_of(hi_hz)
    return 1.0 / (1 + np.exp(-(rows - lo) / edge_rows)) / (1 + np.exp((rows - hi) / edge_rows))


def _brightness_template(shape):
    # full smooth coverage of the bright band (slightly widened so query
    # partials at the band edges still sit on the plateau): bright content
    # lands on this coordinate wherever its partials happen to fall
    band = _smooth_band(BRIGHT_BAND[0] - 200.0, BRIGHT_BAND[1] + 100.0, 1.5, shape[0])
    tmpl = np.repeat(band[:, None], shape[1], axis=1)
    return tmpl * (16.0 / tmpl.max())


RATE_COMB_COLS = tuple(range(24, 245, 28))  # 8 fixed burst times


def _rate_template(shape):
    band = _smooth_band(*RATE_BAND, 1.2, shape[0])
    cols = np.arange(shape[1])
    comb = np.zeros(shape[1])
    for c in RATE_COMB_COLS:
        comb += np.exp(-0.5 * ((cols - c) / 1.3) ** 2)
    time_prof = 0.28 + 0.72 * comb / comb.max()
    tmpl = band[:, None] * time_prof[None, :]
    return tmpl * (18.0 / tmpl.max())


def _scrape_template(shape):
    band = _smooth_band(*IMPACT_BAND, 1.2, shape[0])
    t = np.arange(shape[1]) * (StftParams().hop_size / 16000.0)
    am = 1.0 + 0.22 * np.cos(2 * np.pi * 5.5 * t)
    tmpl = band[:, None] * am[None, :]
    return tmpl * (16.0 / tmpl.max())


def _fill_template(shape):
    # the tube follows the canonical fill sweep trajectory exactly, but only
    # over its 420..950 Hz segment: below that it would collide with the
    # steady-resonance queries, above it with the rate band. Unipolar: a
    # negative "steady resonance" side would collide with the low-frequency
    # query bands through dB-domain window skirts.
    f_lo, f_hi = FILL_SWEEP
    cols = np.arange(shape[1])
    rows = np.arange(shape[0])[:, None]
    sweep_hz = f_lo + (f_hi - f_lo) * cols / (shape[1] - 1)
    active = (sweep_hz >= 420.0) & (sweep_hz <= 950.0)
    rise = np.zeros(shape)
    centers = _row_of(sweep_hz[active])
    rise[:, active] = np.exp(-0.5 * ((rows - centers[None, :]) / 1.2) ** 2)
    return 17.0 * rise


# spectral slivers outside every attribute territory and query band; fillers
# live only here so query-sound inversions cannot excite them coherently
_FILLER_ROW_BLOCKS = ((119, 144), (226, 255))


def _filler_templates(n_fillers, shape, rng):
    """Zero-mean diversity templates on a jittered slot grid.

    Each filler is a frequency dipole (difference of close Gaussian bumps)
    times an integer-cycle cosine time envelope. Zero mean along both axes
    makes them blind to the coherent structures query sounds put everywhere:
    silence offsets, broadband onset stripes, and smooth partial skirts.
    Distinct slots / cosine orders keep the decoder columns near-orthogonal,
    which the inversion optimizer needs to converge quickly.
    """
    rows = np.arange(shape[0])[:, None]
    cols = np.arange(shape[1])[None, :]
    sigma = 0.9
    half_gap = 0.9
    spacing = 3.0
    orders = (1, 2, 3, 4, 5, 6, 7, 8)
    slots = []
    for lo, hi in _FILLER_ROW_BLOCKS:
        center = lo + 2.0
        while center <= hi - 2.0:
            for order in orders:
                slots.append((center, order))
            center += spacing
    if len(slots) < n_fillers:
        raise ValueError("not enough filler slots for the requested latent dim")
    chosen = [slots[i] for i in rng.permutation(len(slots))[:n_fillers]]
    out = []
    for center, order in chosen:
        c = center + rng.uniform(-0.15, 0.15)
        freq_prof = (np.exp(-0.5 * ((rows - c - half_gap) / sigma) ** 2)
                     - np.exp(-0.5 * ((rows - c + half_gap) / sigma) ** 2))
        time_prof = np.cos(2 * np.pi * order * cols / shape[1])
        tmpl = freq_prof * time_prof
        tmpl *= 12.0 / np.abs(tmpl).max()
        out.append(tmpl)
    return out


ATTR_COORDS = {name: i for i, name in enumerate(ATTRIBUTES)}
ATTR_PRIOR_SCALE = 0.25
FILLER_PRIOR_SCALE = 0.15


def build_default_config(seed: int = 0, dim: int = DEFAULT_LATENT_DIM,
                         shape=(256, 256)) -> PlantedConfig:
    """The 128-dim attribute-planted configuration used throughout."""
    if dim < len(ATTRIBUTES) + 1:
        raise ValueError("planted config needs room for the attribute axes")
    rng = np.random.default_rng(seed)
    templates = [
        _brightness_template(shape),
        _rate_template(shape),
        _scrape_template(shape),
        _fill_template(shape),
    ]
    templates += _filler_templates(dim - len(templates), shape, rng)
    basis = np.stack([t.ravel() for t in templates], axis=1)

    bias = np.full(shape, BIAS_LEVEL_DB)
    bias += 25.0 * _freq_ridge(420.0, 1.5, shape[0])[:, None]
    bias += 20.0 * _freq_ridge(640.0, 1.5, shape[0])[:, None]

    scales = np.full(dim, FILLER_PRIOR_SCALE)
    scales[: len(ATTRIBUTES)] = ATTR_PRIOR_SCALE
    mapping = np.diag(scales)
    offset = np.zeros(dim)

    directions = {}
    for name, idx in ATTR_COORDS.items():
        e = np.zeros(dim)
        e[idx] = 1.0
        directions[name] = e
    return PlantedConfig(basis, bias.ravel(), mapping, offset, shape, directions, seed)


@lru_cache(maxsize=2)
def default_planted_generator(seed: int = 0) -> LinearPlantedGenerator:
    return LinearPlantedGenerator(build_default_config(seed))


def small_planted_config(dim_z=6, dim_w=6, shape=(16, 16), seed=0,
                         identity_map=False) -> PlantedConfig:
    """Random smooth low-dimensional config for unit tests and the demo
    external generator."""
    rng = np.random.default_rng(seed)
    rows = np.arange(shape[0])[:, None]
    cols = np.arange(shape[1])[None, :]
    templates = []
    for _ in range(dim_w):
        fr = np.exp(-0.5 * ((rows - rng.uniform(1, shape[0] - 1)) / rng.uniform(1, 3)) ** 2)
        tm = np.exp(-0.5 * ((cols - rng.uniform(1, shape[1] - 1)) / rng.uniform(2, 6)) ** 2)
        templates.append((fr * tm).ravel() * rng.uniform(5, 15))
    basis = np.stack(templates, axis=1)
    if identity_map:
        mapping = np.eye(dim_w, dim_z)
        offset = np.zeros(dim_w)
    else:
        mapping = rng.normal(0, 0.4, (dim_w, dim_z)) + np.eye(dim_w, dim_z)
        offset = rng.normal(0, 0.3, dim_w)
    bias = np.full(shape[0] * shape[1], BIAS_LEVEL_DB)
    e0 = np.zeros(dim_w)
    e0[0] = 1.0
    return PlantedConfig(basis, bias, mapping, offset, shape, {"axis0": e0}, seed)


# --- external generator adapter -------------------------------------------

PROTOCOL_TIMEOUT = 5.0


class ExternalGeneratorError(RuntimeError):
    pass


def read_exact(stream, n: int, timeout: float) -> bytes:
    buf = b""
    while len(buf) < n:
        ready, _, _ = select.select([stream], [], [], timeout)
        if not ready:
            raise ExternalGeneratorError("external generator timed out")
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise ExternalGeneratorError("external generator closed the channel")
        buf += chunk
    return buf


def read_line(stream, timeout: float) -> str:
    buf = b""
    while not buf.endswith(b"\n"):
        buf += read_exact(stream, 1, timeout)
    return buf.decode().strip()


def read_tensor_message(stream, timeout: float) -> np.ndarray:
    head = read_exact(stream, 8, timeout)
    if head[:4] != b"TNS1":
        raise ExternalGeneratorError("protocol error: expected TNS1 payload")
    rank = int.from_bytes(head[4:8], "little")
    dims_raw = read_exact(stream, 4 * rank, timeout)
    dims = [int.from_bytes(dims_raw[i * 4:(i + 1) * 4], "little") for i in range(rank)]
    count = 1
    for d in dims:
        count *= d
    body = read_exact(stream, 4 * count, timeout)
    return tensor_from_bytes(head + dims_raw + body)


class ExternalGenerator(GeneratorHandle):
    """Drives `SYN`/`MAP`/`AVG`/`WGT`/`INFO` over a subprocess pipe.

    One request at a time; concurrent callers are serialized on a lock.
    A request exceeding the timeout raises; there is no retry.
    """

    kind = "external"

    def __init__(self, command, timeout: float = PROTOCOL_TIMEOUT):
        if isinstance(command, str):
            command = command.split()
        self._proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
        )
        self._timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self._w_avg = None
        info = self._request("INFO")
        self._dim_z, self._dim_w = int(info[0]), int(info[1])
        self._shape = (int(info[2]), int(info[3]))
        self.stft_params = params_for_shape(self._shape)

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, cmd: str, payload: np.ndarray | None = None) -> np.ndarray:
        with self._lock:
            self._next_id += 1
            rid = self._next_id
            if self._proc.poll() is not None:
                raise ExternalGeneratorError("external generator process exited")
            self._proc.stdin.write(f"{cmd} {rid}\n".encode())
            if payload is not None:
                self._proc.stdin.write(tensor_to_bytes(payload))
            self._proc.stdin.flush()
            status = read_line(self._proc.stdout, self._timeout)
            parts = status.split(maxsplit=2)
            if len(parts) < 2 or parts[1] != str(rid):
                raise ExternalGeneratorError(f"protocol error: unexpected reply {status!r}")
            if parts[0] == "ERR":
                raise ExternalGeneratorError(parts[2] if len(parts) > 2 else "remote error")
            if parts[0] != "OK":
                raise ExternalGeneratorError(f"protocol error: unexpected reply {status!r}")
            return read_tensor_message(self._proc.stdout, self._timeout)

    @property
    def dim_z(self):
        return self._dim_z

    @property
    def dim_w(self):
        return self._dim_w

    @property
    def spec_shape(self):
        return self._shape

    def map_latent(self, z: LatentVector) -> LatentVector:
        _require_space(z, Z)
        return LatentVector(self._request("MAP", z.values), W)

    def synthesize(self, w: LatentVector) -> Spectrogram:
        _require_space(w, W)
        values = self._request("SYN", w.values)
        return Spectrogram(np.maximum(values, FLOOR_DB), self.stft_params)

    @property
    def w_avg(self) -> LatentVector:
        if self._w_avg is None:
            self._w_avg = LatentVector(self._request("AVG"), W)
        return self._w_avg

    def first_layer_weights(self) -> np.ndarray:
        return self._request("WGT")
