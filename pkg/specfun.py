"""
Funciones especiales para los kernels tomográficos.

Contiene los polinomios de Hermite (fórmula de Richter), la parte real de
la función de cilindro parabólico de argumento imaginario que aparece en el
kernel de número de fotones, y utilidades log-factorial/binomial.

Notación interna: para u real,

    A_ν(u) = ∫_0^∞ t^(2ν+1) cos(u t) e^(−t²/2) dt
           = e^(−u²/4) (2ν+1)! Re D_{−(2ν+2)}(−iu)

A_ν es par en u, acotado, y es lo que consume el kernel de número: el
factor e^(u²/4) del cilindro parabólico se cancela con el gaussiano del
kernel, así que nunca se materializa salvo en re_pcf_even.
"""

import logging
import math
import warnings
from functools import lru_cache

import numpy as np
from scipy.special import dawsn, gammaln

from errores import OrdenFueraDeRango, ParametroInvalido, PerdidaPrecision

logger = logging.getLogger(__name__)

# |u| hasta aquí: recurrencia hacia arriba desde Dawson; más allá: contorno
RECURRENCE_SWITCH = 4.0
# ventana de integración: log-integrando dentro de 46 de su máximo (e^-46 ~ 1e-20)
LOG_WINDOW = 46.0
DEFAULT_MAX_ORDER = 40
# holgura por paso de la recurrencia (en unidades de eps)
RECURRENCE_SLACK = 1024.0
_BISECT_STEPS = 60
_CONTOUR_SLAB = 4096
_EPS = np.finfo(float).eps
_SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------
#                   AUXILIARES DE FORMA Y BISECCIÓN
# --------------------------------------------------------------------
def _as_output(values, scalar):
    """Devuelve float si la entrada era escalar; si no, el arreglo."""
    if scalar:
        return float(np.asarray(values).reshape(-1)[0])
    return values


def _bisect(func, lo, hi, rising):
    """
    Bisección vectorizada del cruce por cero de `func` en [lo, hi].

    `rising` indica si func es creciente en el intervalo. Devuelve el
    extremo que queda del lado exterior de la ventana (más a la izquierda
    si es creciente, más a la derecha si es decreciente). Si no hay cruce,
    devuelve el extremo correspondiente del intervalo.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        above = func(mid) >= 0.0
        if rising:
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        else:
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
    return lo if rising else hi


# --------------------------------------------------------------------
#                         TABLAS DEL KERNEL
# --------------------------------------------------------------------
class KernelTables:
    """
    Coeficientes precalculados hasta `max_order`.

    Se construye una vez (ver default_tables) y después es de solo
    lectura, así que puede compartirse entre hilos sin cuidado especial.
    """

    def __init__(self, max_order=DEFAULT_MAX_ORDER, precision_threshold=1e-10,
                 segment_nodes=96, line_nodes=192):
        if int(max_order) != max_order or max_order < 0:
            raise ParametroInvalido(
                f"max_order debe ser un entero no negativo, no {max_order!r}"
            )
        self.max_order = int(max_order)
        self.precision_threshold = float(precision_threshold)

        top = 2 * self.max_order + 3
        self.log_factorial = gammaln(np.arange(top + 1, dtype=float) + 1.0)

        nu = np.arange(self.max_order + 1, dtype=float)
        self.rec_diag = 4.0 * nu + 3.0
        self.rec_prev = 2.0 * nu * (2.0 * nu + 1.0)

        self._seg_x, self._seg_w = np.polynomial.legendre.leggauss(segment_nodes)
        self._line_x, self._line_w = np.polynomial.legendre.leggauss(line_nodes)

        for arr in (self.log_factorial, self.rec_diag, self.rec_prev,
                    self._seg_x, self._seg_w, self._line_x, self._line_w):
            arr.setflags(write=False)
        logger.debug("KernelTables construidas hasta orden %d", self.max_order)

    # ----------------------------------------------------------------
    def _check_order(self, nu, cap, what):
        if int(nu) != nu or nu < 0:
            raise OrdenFueraDeRango(f"El orden de {what} debe ser entero ≥ 0, no {nu!r}")
        if nu > cap:
            raise OrdenFueraDeRango(
                f"Orden {nu} de {what} fuera de rango (máximo {cap} "
                f"con max_order={self.max_order})"
            )
        return int(nu)

    # ----------------------------------------------------------------
    #                           HERMITE
    # ----------------------------------------------------------------
    def hermite(self, n, y):
        """H_n(y) de los físicos por la recurrencia de tres términos."""
        n = self._check_order(n, 2 * self.max_order + 2, "Hermite")
        scalar = np.ndim(y) == 0
        y = np.asarray(y, dtype=float)
        h_prev = np.ones_like(y)
        if n == 0:
            return _as_output(h_prev, scalar)
        h = 2.0 * y
        for k in range(1, n):
            h_prev, h = h, 2.0 * y * h - 2.0 * k * h_prev
        return _as_output(h, scalar)

    # ----------------------------------------------------------------
    #                 CILINDRO PARABÓLICO ESCALADO
    # ----------------------------------------------------------------
    def scaled_pcf_orders(self, u, order_max, with_error=False):
        """
        Matriz A[ν, ...] para ν = 0..order_max evaluada en |u|.

        Con with_error=True devuelve también una cota del error absoluto
        de cada entrada (se usa para el aviso de pérdida de precisión).
        """
        order_max = self._check_order(order_max, self.max_order, "D")
        u = np.asarray(u, dtype=float)
        shape = u.shape
        flat = np.abs(u.reshape(-1))
        values = np.empty((order_max + 1, flat.size))
        errors = np.empty_like(values)

        small = flat <= RECURRENCE_SWITCH
        if small.any():
            values[:, small], errors[:, small] = self._recurrence(flat[small], order_max)
        idx = np.flatnonzero(~small)
        for start in range(0, idx.size, _CONTOUR_SLAB):
            part = idx[start:start + _CONTOUR_SLAB]
            values[:, part], errors[:, part] = self._contour(flat[part], order_max)

        values = values.reshape((order_max + 1,) + shape)
        if with_error:
            return values, errors.reshape((order_max + 1,) + shape)
        return values

    def _recurrence(self, u, order_max):
        """
        A_0 = 1 − √2 u F(u/√2); A_1 = (3 − u²) A_0 − 1; luego tres términos.

        A_ν es la solución dominante, así que el error propagado se mantiene
        relativo a la escala de los términos de cada paso, s_ν = |c₁A_ν| +
        c₂|A_{ν−1}|; cada paso suma RECURRENCE_SLACK·eps a ese error relativo.
        Una cancelación en el último paso (|A| ≪ s) sí infla la cota.
        """
        u2 = u * u
        dawson_term = _SQRT2 * u * dawsn(u / _SQRT2)
        a = np.empty((order_max + 1, u.size))
        err = np.empty_like(a)
        a[0] = 1.0 - dawson_term
        scale_prev = 1.0 + np.abs(dawson_term)
        err[0] = _EPS * scale_prev
        rel_prev = err[0] / scale_prev
        if order_max >= 1:
            c1 = 3.0 - u2
            a[1] = c1 * a[0] - 1.0
            scale = np.abs(c1 * a[0]) + 1.0
            err[1] = np.abs(c1) * err[0] + _EPS * scale
            rel = err[1] / scale
        for nu in range(1, order_max):
            c1 = self.rec_diag[nu] - u2
            c2 = self.rec_prev[nu]
            a[nu + 1] = c1 * a[nu] - c2 * a[nu - 1]
            scale_next = np.abs(c1 * a[nu]) + c2 * np.abs(a[nu - 1])
            rel_prev, rel = rel, np.maximum(rel, rel_prev) + RECURRENCE_SLACK * _EPS
            err[nu + 1] = rel * scale_next
        return a, err

    def _contour(self, u, order_max):
        """
        Integral sobre el contorno 0 → iu/2 → iu/2 + ∞.

        Tramo imaginario: integrando positivo (−1)^(ν+1) τ^j e^(τ²/2 − uτ).
        Tramo horizontal: pasa por los puntos de silla, así que el módulo
        del integrando nunca supera el tamaño del resultado.
        """
        h = 0.5 * u
        values = np.empty((order_max + 1, u.size))
        errors = np.empty_like(values)
        for nu in range(order_max + 1):
            j = 2 * nu + 1
            seg_log, seg_sum = self._segment(u, h, j)
            line_log, line_sum, line_abs = self._line(u, h, j)
            top = np.maximum(seg_log, line_log)
            seg = np.exp(seg_log - top) * seg_sum
            line_scale = np.exp(line_log - top)
            sign = -1.0 if nu % 2 == 0 else 1.0
            scale = np.exp(top)
            values[nu] = scale * (sign * seg + line_scale * line_sum)
            errors[nu] = 64.0 * _EPS * scale * (seg + line_scale * line_abs)
        return values, errors

    def _segment(self, u, h, j):
        def log_f(t, uu=u):
            with np.errstate(divide="ignore"):
                return j * np.log(t) + 0.5 * t * t - uu * t

        disc = u * u - 4.0 * j
        peak = np.where(disc >= 0.0, 0.5 * (u - np.sqrt(np.maximum(disc, 0.0))), h)
        peak = np.minimum(peak, h)
        log_max = log_f(peak)
        target = log_max - LOG_WINDOW
        lo = _bisect(lambda t: log_f(t) - target, np.zeros_like(u), peak, rising=True)
        hi = _bisect(lambda t: log_f(t) - target, peak, h, rising=False)

        half = 0.5 * (hi - lo)
        nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * self._seg_x[None, :]
        vals = np.exp(log_f(nodes, u[:, None]) - log_max[:, None])
        total = half * (vals @ self._seg_w)
        return log_max, total

    def _line(self, u, h, j):
        h2 = h * h
        offset = 0.375 * u * u

        def log_mod(s, hh2=h2, off=offset):
            return 0.5 * j * np.log(s * s + hh2) - 0.5 * s * s - off

        saddle = np.sqrt(np.maximum(j - h2, 0.0))
        log_max = log_mod(saddle)
        target = log_max - LOG_WINDOW
        lo = _bisect(lambda s: log_mod(s) - target, np.zeros_like(u), saddle, rising=True)
        hi = _bisect(lambda s: log_mod(s) - target, saddle, saddle + 30.0, rising=False)

        half = 0.5 * (hi - lo)
        nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * self._line_x[None, :]
        modulus = np.exp(log_mod(nodes, h2[:, None], offset[:, None]) - log_max[:, None])
        phase = j * np.arctan2(h[:, None], nodes) + 0.5 * u[:, None] * nodes
        total = half * ((modulus * np.cos(phase)) @ self._line_w)
        total_abs = half * (modulus @ self._line_w)
        return log_max, total, total_abs

    # ----------------------------------------------------------------
    def re_pcf_even(self, nu, u):
        """
        Re D_{−(2ν+2)}(−iu), par en u.

        Avisa con PerdidaPrecision si la cota de error supera
        precision_threshold relativo al resultado.
        """
        nu = self._check_order(nu, self.max_order, "D")
        scalar = np.ndim(u) == 0
        u = np.asarray(u, dtype=float)
        a, err = self.scaled_pcf_orders(u, nu, with_error=True)
        a, err = a[nu], err[nu]
        if np.any(err > self.precision_threshold * np.abs(a)):
            worst = float(np.max(err / np.maximum(np.abs(a), np.finfo(float).tiny)))
            logger.warning("re_pcf_even(%d): cancelación relativa estimada %.2e", nu, worst)
            warnings.warn(
                f"re_pcf_even({nu}): error relativo estimado {worst:.2e} supera "
                f"{self.precision_threshold:.0e}",
                PerdidaPrecision,
                stacklevel=2,
            )
        au = np.abs(u)
        log_scale = 0.25 * au * au - self.log_factorial[2 * nu + 1]
        with np.errstate(divide="ignore"):
            value = np.sign(a) * np.exp(np.log(np.abs(a)) + log_scale)
        return _as_output(value, scalar)

    # ----------------------------------------------------------------
    def log_binomial(self, k, n):
        return log_binomial(k, n)


# --------------------------------------------------------------------
#                     FUNCIONES DE MÓDULO
# --------------------------------------------------------------------
def log_binomial(k, n):
    """ln C(k, n) vía log-gamma; 0 exacto en los bordes."""
    if int(k) != k or int(n) != n or k < 0 or n < 0:
        raise ParametroInvalido(f"log_binomial necesita enteros ≥ 0, no ({k!r}, {n!r})")
    k, n = int(k), int(n)
    if n > k:
        raise ParametroInvalido(f"log_binomial: n={n} mayor que k={k}")
    if n == 0 or n == k:
        return 0.0
    return float(gammaln(k + 1.0) - gammaln(n + 1.0) - gammaln(k - n + 1.0))


@lru_cache(maxsize=None)
def default_tables(max_order=DEFAULT_MAX_ORDER):
    """Tablas compartidas (se construyen una vez por max_order)."""
    return KernelTables(max_order)


def hermite(n, y):
    return default_tables().hermite(n, y)


def re_pcf_even(nu, u):
    return default_tables().re_pcf_even(nu, u)


def scaled_pcf_orders(u, order_max):
    return default_tables().scaled_pcf_orders(u, order_max)
