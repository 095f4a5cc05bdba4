"""
Estimación tomográfica: kernels de número de fotones y de Richter
promediados sobre datos homodinos, con errores por bloques.

Reconstrucción del estado verdadero: kernel con η de los datos sobre la
cuadratura reescalada x. Reconstrucción del estado ruidoso ρ̂_η: kernel con
η = 1 sobre la cuadratura del detector y = √η·x.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from errores import (ConflictoModo, CovarianzaDegenerada, DatasetInvalido,
                     DominioKernel, OrdenFueraDeRango, ParametroInvalido)
from sampler import resolve_workers
from specfun import default_tables, log_binomial

logger = logging.getLogger(__name__)

MODES = ("true_state", "noisy_state")
MOMENT_TAGS = ("n1", "n2", "n1^2", "n2^2", "n1n2")
DEFAULT_BLOCKS = 50
GRID_STEP = 2e-3
GRID_MARGIN = 0.05
_SLAB = 2 ** 18


# --------------------------------------------------------------------
#                      KERNEL DE NÚMERO
# --------------------------------------------------------------------
def kappa_squared(eta):
    """κ² = η/(2η−1); solo existe para η > 0.5."""
    if not eta <= 1.0:
        raise ParametroInvalido(f"η debe estar en (0, 1], no {eta!r}")
    if not eta > 0.5:
        raise DominioKernel(
            f"El kernel de número necesita η > 0.5 (κ diverge); se pidió η={eta!r}"
        )
    return eta / (2.0 * eta - 1.0)


def _kernel_coefficients(n_max, kappa2):
    # coef[n, ν] = 2κ² (−1)^ν C(n, ν) κ^(2ν) / ν!, ν ≤ n
    n = np.arange(n_max + 1, dtype=float)[:, None]
    nu = np.arange(n_max + 1, dtype=float)[None, :]
    valid = nu <= n
    log_c = (gammaln(n + 1.0) - gammaln(nu + 1.0) - gammaln(np.maximum(n - nu, 0.0) + 1.0)
             + nu * math.log(kappa2) - gammaln(nu + 1.0))
    sign = np.where(nu % 2 == 0, 1.0, -1.0)
    return 2.0 * kappa2 * np.where(valid, sign * np.exp(log_c), 0.0)


def _check_kernel_order(n, tables):
    if int(n) != n or n < 0:
        raise OrdenFueraDeRango(f"El orden del kernel debe ser entero ≥ 0, no {n!r}")
    if n > tables.max_order:
        raise OrdenFueraDeRango(
            f"Orden {n} mayor que el tope estable del kernel ({tables.max_order})"
        )
    return int(n)


def number_kernel_matrix(n_max, eta, x, tables=None):
    """K^(n)_η(x) para n = 0..n_max; forma (n_max+1,) + x.shape."""
    tables = tables or default_tables()
    n_max = _check_kernel_order(n_max, tables)
    kappa2 = kappa_squared(eta)
    x = np.asarray(x, dtype=float)
    u = 2.0 * math.sqrt(kappa2) * np.abs(x)
    a = tables.scaled_pcf_orders(u, n_max)
    return np.tensordot(_kernel_coefficients(n_max, kappa2), a, axes=(1, 0))


def number_kernel(n, eta, x, tables=None):
    """K^(n)_η(x); no depende de la fase."""
    tables = tables or default_tables()
    n = _check_kernel_order(n, tables)
    values = number_kernel_matrix(n, eta, x, tables)[n]
    if np.ndim(x) == 0:
        return float(values)
    return values


class NumberKernelGrid:
    """
    Kernels K^(0..n_max)_η tabulados en una rejilla uniforme de |x| e
    interpolados con splines cúbicos (derivada nula en x = 0).
    """

    def __init__(self, n_max, eta, x_max, step=GRID_STEP, tables=None):
        if not step > 0:
            raise ParametroInvalido(f"El paso de la rejilla debe ser > 0, no {step!r}")
        self.n_max = int(n_max)
        self.eta = float(eta)
        points = int(math.ceil((abs(x_max) + GRID_MARGIN) / step)) + 1
        grid = np.arange(max(points, 4)) * step
        values = number_kernel_matrix(self.n_max, self.eta, grid, tables)
        self.x_max = float(grid[-1])
        self._spline = CubicSpline(
            grid, values, axis=1, bc_type=((1, np.zeros(self.n_max + 1)), "not-a-knot")
        )
        logger.debug("NumberKernelGrid: n_max=%d, eta=%g, %d nodos hasta |x|=%.3f",
                     self.n_max, self.eta, grid.size, self.x_max)

    def __call__(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        if ax.size and ax.max() > self.x_max:
            raise ParametroInvalido(
                f"|x|={ax.max():.4g} fuera de la rejilla (máximo {self.x_max:.4g})"
            )
        return self._spline(ax)


# --------------------------------------------------------------------
#                       KERNEL DE RICHTER
# --------------------------------------------------------------------
def richter_kernel(n, m, eta, x, phi, tables=None):
    """
    Kernel de a†ⁿaᵐ: e^(i(m−n)φ) H_{n+m}(√(2η)x) / (√((2η)^(n+m)) C(n+m, n)).
    Real (y sin fase) cuando n = m.
    """
    tables = tables or default_tables()
    for order in (n, m):
        if int(order) != order or order < 0:
            raise OrdenFueraDeRango(f"Órdenes de Richter inválidos: ({n!r}, {m!r})")
    n, m = int(n), int(m)
    if n + m > 2 * tables.max_order:
        raise OrdenFueraDeRango(f"n+m={n + m} supera 2·max_order={2 * tables.max_order}")
    if not (0.0 < eta <= 1.0):
        raise ParametroInvalido(f"η debe estar en (0, 1], no {eta!r}")
    if n != m and eta <= 0.5:
        raise DominioKernel(f"Kernel de Richter con n≠m necesita η > 0.5, no {eta!r}")
    total = n + m
    y = math.sqrt(2.0 * eta) * np.asarray(x, dtype=float)
    log_norm = 0.5 * total * math.log(2.0 * eta) + log_binomial(total, n)
    values = tables.hermite(total, y) / math.exp(log_norm)
    if n == m:
        return values
    return values * np.exp(1j * (m - n) * np.asarray(phi, dtype=float))


# --------------------------------------------------------------------
#                  SUMAS EXACTAS POR BLOQUE
# --------------------------------------------------------------------
def _fsum_pair(items):
    """Suma correctamente redondeada y su residuo (hi, lo)."""
    hi = math.fsum(items)
    items.append(-hi)
    return hi, math.fsum(items)


def _block_sums(evaluate, start, stop):
    """
    Sumas y sumas de cuadrados de las filas de evaluate(a, b) sobre
    [start, stop). Devuelve (hi, lo, sq) por fila.
    """
    partial, squares = None, None
    for a in range(start, stop, _SLAB):
        b = min(a + _SLAB, stop)
        values = np.atleast_2d(evaluate(a, b))
        if partial is None:
            partial = [[] for _ in range(values.shape[0])]
            squares = [[] for _ in range(values.shape[0])]
        for row, vals in enumerate(values):
            hi, lo = _fsum_pair(vals.tolist())
            partial[row] += [hi, lo]
            squares[row].append(math.fsum((vals * vals).tolist()))
    sums = [_fsum_pair(list(p)) for p in partial]
    return (np.array([s[0] for s in sums]), np.array([s[1] for s in sums]),
            np.array([math.fsum(sq) for sq in squares]))


def block_edges(count, n_blocks):
    """Bordes de bloques contiguos casi iguales (como np.array_split)."""
    base, extra = divmod(count, n_blocks)
    sizes = [base + 1] * extra + [base] * (n_blocks - extra)
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


def _check_blocks(count, n_blocks):
    if int(n_blocks) != n_blocks or n_blocks < 2:
        raise CovarianzaDegenerada(f"Se necesitan al menos 2 bloques, no {n_blocks!r}")
    if count < n_blocks:
        raise DatasetInvalido(
            f"{count} muestras no alcanzan para {n_blocks} bloques no vacíos"
        )
    return int(n_blocks)


def _blocked_statistics(evaluate, count, n_blocks, workers=None):
    """
    Medias totales, errores estándar y medias por bloque de las filas de
    `evaluate`. El total se reduce en orden de bloque con fsum.
    """
    edges = block_edges(count, n_blocks)
    spans = list(zip(edges[:-1], edges[1:]))
    workers = min(resolve_workers(workers), len(spans))
    if workers == 1:
        results = [_block_sums(evaluate, a, b) for a, b in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda span: _block_sums(evaluate, *span), spans))

    counts = np.diff(edges).astype(float)
    hi = np.array([r[0] for r in results])          # bloques × filas
    lo = np.array([r[1] for r in results])
    sq = np.array([r[2] for r in results])
    rows = hi.shape[1]
    total = np.array([math.fsum(np.concatenate([hi[:, k], lo[:, k]]).tolist())
                      for k in range(rows)])
    total_sq = np.array([math.fsum(sq[:, k].tolist()) for k in range(rows)])
    means = total / count
    if count > 1:
        var = np.maximum(total_sq - count * means * means, 0.0) / (count - 1)
    else:
        var = np.zeros(rows)
    stderr = np.sqrt(var / count)
    block_means = (hi + lo) / counts[:, None]
    return means, stderr, block_means, counts


def _block_covariance(block_means):
    """Covarianza de la media total estimada con las medias por bloque."""
    blocks = block_means.shape[0]
    if blocks < 2:
        raise CovarianzaDegenerada("Se necesitan al menos 2 bloques para la covarianza")
    if np.all(block_means == block_means[0]):
        # bloques idénticos (estimaciones exactas): cero sin residuos de redondeo
        size = block_means.shape[1]
        return np.zeros((size, size))
    return np.atleast_2d(np.cov(block_means, rowvar=False, ddof=1)) / blocks


# --------------------------------------------------------------------
#                          ESTIMACIONES
# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class NumberDistEstimate:
    """p̂(n) con errores estándar y medias por bloque (bloque × n)."""

    probs: np.ndarray
    stderr: np.ndarray
    block_means: np.ndarray
    block_counts: np.ndarray
    n_samples: int
    kernel_eta: float
    data_eta: float
    mode: str = "noisy_state"
    label: str = ""
    seed: int = None

    def __post_init__(self):
        if np.any(np.asarray(self.stderr) < 0):
            raise ParametroInvalido("stderr no puede ser negativo")
        if np.asarray(self.block_means).shape[0] < 2:
            raise CovarianzaDegenerada("Una estimación necesita al menos 2 bloques")
        if self.kernel_eta not in (self.data_eta, 1.0):
            raise ConflictoModo(
                f"kernel_eta={self.kernel_eta} debe ser data_eta={self.data_eta} o 1"
            )
        if self.kernel_eta == self.data_eta and self.data_eta <= 0.5:
            raise ConflictoModo("Reconstruir con el η de los datos exige η > 0.5")

    @property
    def n_max(self):
        return len(self.probs) - 1

    @property
    def n_blocks(self):
        return self.block_means.shape[0]

    def covariance(self):
        return _block_covariance(self.block_means)

    def weighted_block_mean(self):
        return (self.block_counts[:, None] * self.block_means).sum(axis=0) / self.block_counts.sum()

    def to_frame(self):
        return pd.DataFrame({"n": np.arange(self.probs.size), "p": self.probs,
                             "stderr": self.stderr})

    def to_dict(self, include_blocks=False):
        data = {
            "label": self.label,
            "mode": self.mode,
            "seed": self.seed,
            "n_samples": int(self.n_samples),
            "kernel_eta": self.kernel_eta,
            "data_eta": self.data_eta,
            "probs": self.probs.tolist(),
            "stderr": self.stderr.tolist(),
        }
        if include_blocks:
            data["block_means"] = self.block_means.tolist()
            data["block_counts"] = self.block_counts.tolist()
        return data

    @classmethod
    def from_exact(cls, dist, n_max=None, blocks=3):
        """Estimación sin ruido estadístico (covarianza nula) a partir de p(n) exacta."""
        probs = np.asarray(dist.probs, dtype=float)
        if n_max is not None:
            probs = probs[:n_max + 1]
        return cls(
            probs=probs.copy(),
            stderr=np.zeros(probs.size),
            block_means=np.tile(probs, (blocks, 1)),
            block_counts=np.ones(blocks),
            n_samples=0,
            kernel_eta=1.0,
            data_eta=1.0,
            mode="exact",
            label=dist.label,
        )


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    """Momentos de número de dos modos {tag: (valor, stderr)}."""

    moments: dict
    block_means: pd.DataFrame
    block_counts: np.ndarray
    n_samples: int
    kernel_eta: float = 1.0
    data_eta: float = 1.0
    label: str = ""
    seed: int = None

    def __post_init__(self):
        for tag, (value, err) in self.moments.items():
            if not (math.isfinite(value) and math.isfinite(err)):
                raise ParametroInvalido(f"Momento {tag} no finito")

    def value(self, tag):
        return self.moments[tag][0]

    def covariance(self, tags=MOMENT_TAGS):
        missing = [tag for tag in tags if tag not in self.block_means.columns]
        if missing:
            raise CovarianzaDegenerada(f"Faltan momentos en los bloques: {missing}")
        return _block_covariance(self.block_means.loc[:, list(tags)].to_numpy())

    def to_frame(self):
        return pd.DataFrame(
            [(tag, value, err) for tag, (value, err) in self.moments.items()],
            columns=["moment", "value", "stderr"],
        )

    def to_dict(self, include_blocks=False):
        data = {
            "label": self.label,
            "seed": self.seed,
            "n_samples": int(self.n_samples),
            "kernel_eta": self.kernel_eta,
            "data_eta": self.data_eta,
            "moments": {tag: {"value": v, "stderr": e} for tag, (v, e) in self.moments.items()},
        }
        if include_blocks:
            data["block_means"] = self.block_means.to_dict(orient="list")
            data["block_counts"] = self.block_counts.tolist()
        return data

    @classmethod
    def from_exact(cls, moments, blocks=3, label="exact"):
        values = {tag: float(moments[tag]) for tag in moments}
        frame = pd.DataFrame([values] * blocks)
        return cls(
            moments={tag: (value, 0.0) for tag, value in values.items()},
            block_means=frame,
            block_counts=np.ones(blocks),
            n_samples=0,
            label=label,
        )


def estimate_photon_dist(data, mode="noisy_state", n_max=20, n_blocks=DEFAULT_BLOCKS, *,
                         exact=False, grid_step=GRID_STEP, tables=None, workers=None):
    """
    p̂(n) como media muestral del kernel de número.

    `exact=True` evalúa el kernel directamente en cada muestra (lento;
    para validar la rejilla interpolada).
    """
    if data.mode_count != 1:
        raise DatasetInvalido("estimate_photon_dist necesita un dataset de un modo")
    if mode not in MODES:
        raise ParametroInvalido(f"mode debe ser uno de {MODES}, no {mode!r}")
    n_blocks = _check_blocks(data.count, n_blocks)
    tables = tables or default_tables()
    n_max = _check_kernel_order(n_max, tables)

    x = data.column("x")
    if mode == "true_state":
        if data.eta <= 0.5:
            raise ConflictoModo(
                f"true_state necesita η > 0.5; los datos tienen η={data.eta}"
            )
        kernel_eta, points = data.eta, x
    else:
        kernel_eta, points = 1.0, math.sqrt(data.eta) * x

    if exact:
        def kernel(values):
            return number_kernel_matrix(n_max, kernel_eta, values, tables)
    else:
        kernel = NumberKernelGrid(n_max, kernel_eta, np.abs(points).max(), grid_step, tables)

    means, stderr, block_means, counts = _blocked_statistics(
        lambda a, b: kernel(points[a:b]), data.count, n_blocks, workers
    )
    logger.info("estimate_photon_dist: %s, %s, %d muestras, n_max=%d, %d bloques",
                data.state_label, mode, data.count, n_max, n_blocks)
    return NumberDistEstimate(
        probs=means,
        stderr=stderr,
        block_means=block_means,
        block_counts=counts,
        n_samples=data.count,
        kernel_eta=kernel_eta,
        data_eta=data.eta,
        mode=mode,
        label=data.state_label,
        seed=data.seed,
    )


def estimate_two_mode_moments(data, n_blocks=DEFAULT_BLOCKS, *, tables=None, workers=None):
    """
    ⟨n̂ᵢ⟩, ⟨n̂ᵢ²⟩ = ⟨a†²a²⟩ + ⟨n̂⟩ y ⟨n̂₁n̂₂⟩ con kernels de Richter a η = 1
    sobre las cuadraturas del detector.
    """
    if data.mode_count != 2:
        raise DatasetInvalido("estimate_two_mode_moments necesita un dataset de dos modos")
    n_blocks = _check_blocks(data.count, n_blocks)
    tables = tables or default_tables()
    scale = math.sqrt(data.eta)
    y1, y2 = scale * data.column("x1"), scale * data.column("x2")
    phi1, phi2 = data.column("phi1"), data.column("phi2")

    def evaluate(a, b):
        first = richter_kernel(1, 1, 1.0, y1[a:b], phi1[a:b], tables)
        second = richter_kernel(1, 1, 1.0, y2[a:b], phi2[a:b], tables)
        first_sq = richter_kernel(2, 2, 1.0, y1[a:b], phi1[a:b], tables) + first
        second_sq = richter_kernel(2, 2, 1.0, y2[a:b], phi2[a:b], tables) + second
        return np.vstack([first, second, first_sq, second_sq, first * second])

    means, stderr, block_means, counts = _blocked_statistics(
        evaluate, data.count, n_blocks, workers
    )
    logger.info("estimate_two_mode_moments: %s, %d muestras, %d bloques",
                data.state_label, data.count, n_blocks)
    return MomentEstimate(
        moments={tag: (float(v), float(e)) for tag, v, e in zip(MOMENT_TAGS, means, stderr)},
        block_means=pd.DataFrame(block_means, columns=list(MOMENT_TAGS)),
        block_counts=counts,
        n_samples=data.count,
        kernel_eta=1.0,
        data_eta=data.eta,
        label=data.state_label,
        seed=data.seed,
    )
