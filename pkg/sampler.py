"""
Generación Monte-Carlo de datos homodinos.

Cada bloque de `chunk_size` muestras usa su propio flujo Philox con clave
`seed` y contador `chunk_index << 192`, así el resultado no depende del
número de hilos ni del orden en que terminan.
"""

import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from errores import DatasetInvalido, EstadoNoSoportado, ParametroInvalido
from states import (StateKind, check_eta, check_lambda, format_complex,
                    noise_variance, twin_sum_difference_variances)

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 2 ** 16
FORMAT_VERSION = 1
SINGLE_COLUMNS = ("x", "phi")
TWIN_COLUMNS = ("x1", "x2", "phi1", "phi2")
_PHI_MAX = np.nextafter(np.pi, 0.0)
_MAGIC_HEADER = struct.Struct("<Q")


# --------------------------------------------------------------------
#                  FUNCIONES AUXILIARES
# --------------------------------------------------------------------
def check_required_columns(frame, columns, name="dataset"):
    """Columnas de cuadratura y fase presentes; si no, DatasetInvalido."""
    missing = [col for col in columns if col not in frame.columns]
    if missing:
        raise DatasetInvalido(f"Al {name} le faltan las columnas {missing}")


def check_seed(seed):
    if isinstance(seed, bool) or int(seed) != seed or not (0 <= seed < 2 ** 128):
        raise ParametroInvalido(f"La semilla debe ser un entero en [0, 2^128), no {seed!r}")
    return int(seed)


def check_count(count):
    if isinstance(count, bool) or int(count) != count or count < 1:
        raise ParametroInvalido(f"El número de muestras debe ser entero ≥ 1, no {count!r}")
    return int(count)


def check_phase(phi):
    if not (0.0 <= phi < math.pi):
        raise ParametroInvalido(f"La fase fijada debe estar en [0, π), no {phi!r}")
    return float(phi)


def resolve_workers(workers=None):
    """Argumento explícito > TOMONC_WORKERS > núcleos disponibles."""
    if workers is None:
        env = os.environ.get("TOMONC_WORKERS")
        if env:
            try:
                workers = int(env)
            except ValueError:
                logger.warning("TOMONC_WORKERS=%r no es un entero; se ignora", env)
                workers = None
    if workers is None:
        workers = os.cpu_count() or 1
    return max(1, int(workers))


def chunk_rng(seed, chunk_index):
    """Generador del bloque `chunk_index` (Philox, contador en la palabra alta)."""
    seed = check_seed(seed)
    if chunk_index < 0 or chunk_index >= 2 ** 64:
        raise ParametroInvalido(f"Índice de bloque fuera de rango: {chunk_index}")
    return np.random.Generator(np.random.Philox(key=seed, counter=int(chunk_index) << 192))


def _chunk_sizes(count, chunk_size):
    if int(chunk_size) != chunk_size or chunk_size < 1:
        raise ParametroInvalido(f"chunk_size debe ser entero ≥ 1, no {chunk_size!r}")
    full, rest = divmod(count, int(chunk_size))
    return [int(chunk_size)] * full + ([rest] if rest else [])


def _run_chunks(func, sizes, workers):
    workers = min(resolve_workers(workers), len(sizes))
    logger.debug("Generando %d bloques con %d hilos", len(sizes), workers)
    if workers == 1:
        return [func(i, size) for i, size in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, range(len(sizes)), sizes))


# --------------------------------------------------------------------
#                          DATASET
# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class HomodyneDataset:
    """
    Muestras homodinas. Un modo: columnas (x, phi); dos modos:
    (x1, x2, phi1, phi2). x es la cuadratura reescalada x₀ + g.
    """

    mode_count: int
    frame: pd.DataFrame
    eta: float
    seed: int
    state_label: str
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.mode_count not in (1, 2):
            raise DatasetInvalido(f"mode_count debe ser 1 o 2, no {self.mode_count!r}")
        check_eta(self.eta)
        columns = self.columns
        check_required_columns(self.frame, columns)
        if len(self.frame) == 0:
            raise DatasetInvalido("El dataset está vacío")
        values = self.frame.loc[:, list(columns)].to_numpy(dtype=float)
        if not np.all(np.isfinite(values)):
            raise DatasetInvalido("El dataset contiene valores no finitos")
        phases = values[:, self.mode_count:]
        if np.any(phases < 0.0) or np.any(phases >= math.pi):
            raise DatasetInvalido("Las fases deben estar en [0, π)")

    @property
    def columns(self):
        return SINGLE_COLUMNS if self.mode_count == 1 else TWIN_COLUMNS

    @property
    def count(self):
        return len(self.frame)

    def column(self, name):
        return self.frame[name].to_numpy(dtype=float)

    def header(self):
        return {
            "format_version": FORMAT_VERSION,
            "state_label": self.state_label,
            "eta": self.eta,
            "seed": self.seed,
            "count": self.count,
            "mode_count": self.mode_count,
            "chunk_size": self.chunk_size,
            "columns": list(self.columns),
        }

    # ---- E/S ----
    def save(self, path):
        """Archivo binario columnar: largo del encabezado, JSON, float64 LE por columna."""
        blob = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(_MAGIC_HEADER.pack(len(blob)))
            fh.write(blob)
            for col in self.columns:
                fh.write(np.ascontiguousarray(self.column(col), dtype="<f8").tobytes())
        logger.info("Dataset guardado en %s (%d muestras)", path, self.count)
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        with path.open("rb") as fh:
            raw = fh.read(_MAGIC_HEADER.size)
            if len(raw) != _MAGIC_HEADER.size:
                raise DatasetInvalido(f"{path}: archivo truncado")
            (size,) = _MAGIC_HEADER.unpack(raw)
            try:
                header = json.loads(fh.read(size).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise DatasetInvalido(f"{path}: encabezado JSON inválido ({exc})") from exc
            if header.get("format_version") != FORMAT_VERSION:
                raise DatasetInvalido(
                    f"{path}: versión de formato {header.get('format_version')!r} no soportada"
                )
            count = int(header["count"])
            columns = {}
            for col in header["columns"]:
                data = fh.read(8 * count)
                if len(data) != 8 * count:
                    raise DatasetInvalido(f"{path}: columna {col} truncada")
                columns[col] = np.frombuffer(data, dtype="<f8").astype(float)
        return cls(
            mode_count=int(header["mode_count"]),
            frame=pd.DataFrame(columns),
            eta=float(header["eta"]),
            seed=int(header["seed"]),
            state_label=header["state_label"],
            chunk_size=int(header["chunk_size"]),
        )

    def to_csv(self, path):
        self.frame.to_csv(path, index=False, float_format="%.17g")
        return Path(path)


# --------------------------------------------------------------------
#                       UN MODO
# --------------------------------------------------------------------
def _cat_quadrature(alpha, phi, rng):
    # propuesta ½N(±X, 1/4); aceptación (1 + cos(4Px)/cosh(4Xx))/2
    rotated = alpha * np.exp(-1j * phi)
    mean_x, mean_p = rotated.real, rotated.imag
    x = np.empty(phi.size)
    pending = np.arange(phi.size)
    while pending.size:
        mx, mp = mean_x[pending], mean_p[pending]
        sign = np.where(rng.random(pending.size) < 0.5, 1.0, -1.0)
        cand = sign * mx + 0.5 * rng.standard_normal(pending.size)
        with np.errstate(over="ignore"):
            accept = 0.5 * (1.0 + np.cos(4.0 * mp * cand) / np.cosh(4.0 * mx * cand))
        ok = rng.random(pending.size) < accept
        x[pending[ok]] = cand[ok]
        pending = pending[~ok]
    return x


def _ideal_quadrature(state, phi, rng):
    if state.kind is StateKind.COHERENT:
        mean = np.real(state.alpha * np.exp(-1j * phi))
        return mean + 0.5 * rng.standard_normal(phi.size)
    if state.kind is StateKind.SQUEEZED:
        mean = np.real(state.alpha * np.exp(-1j * phi))
        std = 0.5 * np.sqrt(math.exp(2 * state.r) * np.cos(phi) ** 2
                            + math.exp(-2 * state.r) * np.sin(phi) ** 2)
        return mean + std * rng.standard_normal(phi.size)
    if state.kind is StateKind.EVEN_CAT:
        return _cat_quadrature(state.alpha, phi, rng)
    raise EstadoNoSoportado(f"sample_single no acepta {state.kind.value}; usar sample_twin")


def _phases(rng, size, pinned):
    if pinned is None:
        return np.minimum(np.pi * rng.random(size), _PHI_MAX)
    return np.full(size, pinned)


def sample_single(state, eta, count, seed, *, phase=None, chunk_size=DEFAULT_CHUNK,
                  workers=None):
    """
    Datos (x, φ) de un modo: φ uniforme en [0, π) (o fija con `phase`),
    x₀ de la densidad ideal y ruido gaussiano de varianza Δ²_η.
    """
    if not state.is_single_mode:
        raise EstadoNoSoportado("sample_single no acepta twin beam; usar sample_twin")
    eta = check_eta(eta)
    count = check_count(count)
    seed = check_seed(seed)
    pinned = None if phase is None else check_phase(phase)
    noise_std = math.sqrt(noise_variance(eta))

    def _chunk(index, size):
        rng = chunk_rng(seed, index)
        phi = _phases(rng, size, pinned)
        x = _ideal_quadrature(state, phi, rng)
        if noise_std > 0:
            x = x + noise_std * rng.standard_normal(size)
        return x, phi

    parts = _run_chunks(_chunk, _chunk_sizes(count, chunk_size), workers)
    frame = pd.DataFrame({
        "x": np.concatenate([p[0] for p in parts]),
        "phi": np.concatenate([p[1] for p in parts]),
    })
    label = state.label if pinned is None else f"{state.label} @ phi={pinned:.6g}"
    logger.info("sample_single: %s, eta=%g, %d muestras, seed=%d", label, eta, count, seed)
    return HomodyneDataset(1, frame, eta, seed, label, int(chunk_size))


# --------------------------------------------------------------------
#                       DOS MODOS
# --------------------------------------------------------------------
def _twin_phases(phase_policy):
    if isinstance(phase_policy, str):
        if phase_policy != "fluctuating":
            raise ParametroInvalido(
                f"phase_policy debe ser 'fluctuating' o (phi1, phi2), no {phase_policy!r}"
            )
        return None
    phi1, phi2 = phase_policy
    return check_phase(phi1), check_phase(phi2)


def sample_twin(lam, eta, count, seed, phase_policy="fluctuating", *,
                chunk_size=DEFAULT_CHUNK, workers=None):
    """
    Datos (x₁, x₂, φ₁, φ₂) del twin beam: u = x₁+x₂ y v = x₁−x₂ gaussianas
    independientes con varianzas (d²_{±z} + 4Δ²_η)/2.
    """
    lam = check_lambda(lam)
    eta = check_eta(eta)
    count = check_count(count)
    seed = check_seed(seed)
    pinned = _twin_phases(phase_policy)

    def _chunk(index, size):
        rng = chunk_rng(seed, index)
        if pinned is None:
            phi1 = _phases(rng, size, None)
            phi2 = _phases(rng, size, None)
        else:
            phi1 = np.full(size, pinned[0])
            phi2 = np.full(size, pinned[1])
        var_u, var_v = twin_sum_difference_variances(lam, eta, phi1 + phi2)
        u = np.sqrt(var_u) * rng.standard_normal(size)
        v = np.sqrt(var_v) * rng.standard_normal(size)
        return 0.5 * (u + v), 0.5 * (u - v), phi1, phi2

    parts = _run_chunks(_chunk, _chunk_sizes(count, chunk_size), workers)
    frame = pd.DataFrame({
        name: np.concatenate([p[i] for p in parts]) for i, name in enumerate(TWIN_COLUMNS)
    })
    label = f"twin_beam(lambda={format_complex(lam)})"
    if pinned is not None:
        label += f" @ phi=({pinned[0]:.6g}, {pinned[1]:.6g})"
    logger.info("sample_twin: %s, eta=%g, %d muestras, seed=%d", label, eta, count, seed)
    return HomodyneDataset(2, frame, eta, seed, label, int(chunk_size))


def combine_independent(first, second):
    """Une dos datasets de un modo (mismo η y tamaño) en uno de dos modos independientes."""
    for data in (first, second):
        if data.mode_count != 1:
            raise DatasetInvalido("combine_independent necesita datasets de un modo")
    if first.count != second.count or first.eta != second.eta:
        raise DatasetInvalido(
            "combine_independent necesita el mismo número de muestras y el mismo η"
        )
    frame = pd.DataFrame({
        "x1": first.column("x"),
        "x2": second.column("x"),
        "phi1": first.column("phi"),
        "phi2": second.column("phi"),
    })
    label = f"{first.state_label} (x) {second.state_label}"
    return HomodyneDataset(2, frame, first.eta, first.seed, label, first.chunk_size)
