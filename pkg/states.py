"""
Modelos analíticos de los estados fuente.

Convención de cuadratura: x_φ = (a e^(−iφ) + a† e^(iφ))/2, varianza de vacío
1/4. Ruido de eficiencia: Δ²_η = (1−η)/(4η) sumado a la cuadratura
reescalada.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import gammaln
from scipy.stats import binom, poisson

from errores import CorteInsuficiente, EstadoNoSoportado, ParametroInvalido

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-12
MIN_CUTOFF = 64
MAX_CUTOFF = 4096


class StateKind(str, Enum):
    COHERENT = "coherent"
    SQUEEZED = "squeezed"
    EVEN_CAT = "even_cat"
    TWIN_BEAM = "twin_beam"


# --------------------------------------------------------------------
#                  FUNCIONES AUXILIARES Y DE FORMATO
# --------------------------------------------------------------------
def noise_variance(eta):
    """Δ²_η = (1−η)/(4η); valida η ∈ (0, 1]."""
    check_eta(eta)
    return (1.0 - eta) / (4.0 * eta)


def check_eta(eta):
    if not (0.0 < eta <= 1.0):
        raise ParametroInvalido(f"η debe estar en (0, 1], no {eta!r}")
    return float(eta)


def check_lambda(lam):
    if not abs(lam) < 1.0:
        raise ParametroInvalido(f"|λ| debe ser < 1, no {abs(lam)!r}")
    return complex(lam)


def format_complex(z):
    """Texto corto para etiquetas: 1.414 o 1.414+0.5j."""
    z = complex(z)
    if z.imag == 0:
        return f"{z.real:.6g}"
    return f"{z.real:.6g}{z.imag:+.6g}j"


# --------------------------------------------------------------------
#                          TIPOS DE DATOS
# --------------------------------------------------------------------
@dataclass(frozen=True)
class StateModel:
    """
    Estado fuente. `fock_cutoff=None` elige el corte automáticamente
    (menor N con cola < 1e-12, mínimo 64).
    """

    kind: StateKind
    alpha: complex = 0j
    r: float = 0.0
    lam: complex = 0j
    fock_cutoff: int = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StateKind(self.kind))
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "lam", complex(self.lam))
        object.__setattr__(self, "r", float(self.r))
        if self.kind is StateKind.TWIN_BEAM:
            check_lambda(self.lam)
        if self.fock_cutoff is not None and (int(self.fock_cutoff) != self.fock_cutoff
                                             or self.fock_cutoff < 0):
            raise ParametroInvalido(f"fock_cutoff inválido: {self.fock_cutoff!r}")

    # ---- constructores ----
    @classmethod
    def coherent(cls, alpha, fock_cutoff=None):
        return cls(StateKind.COHERENT, alpha=alpha, fock_cutoff=fock_cutoff)

    @classmethod
    def squeezed(cls, alpha, r, fock_cutoff=None):
        return cls(StateKind.SQUEEZED, alpha=alpha, r=r, fock_cutoff=fock_cutoff)

    @classmethod
    def even_cat(cls, alpha, fock_cutoff=None):
        return cls(StateKind.EVEN_CAT, alpha=alpha, fock_cutoff=fock_cutoff)

    @classmethod
    def twin_beam(cls, lam, fock_cutoff=None):
        return cls(StateKind.TWIN_BEAM, lam=lam, fock_cutoff=fock_cutoff)

    @classmethod
    def even_cat_with_mean(cls, nbar, fock_cutoff=None):
        """Gato par con n̄ dado: resuelve |α|² tanh|α|² = n̄ (α real)."""
        if nbar < 0:
            raise ParametroInvalido(f"n̄ debe ser ≥ 0, no {nbar!r}")
        if nbar == 0:
            return cls.even_cat(0.0, fock_cutoff)
        upper = nbar + 2.0
        mod2 = brentq(lambda s: s * math.tanh(s) - nbar, 0.0, upper, xtol=1e-15, rtol=1e-15)
        return cls.even_cat(math.sqrt(mod2), fock_cutoff)

    @classmethod
    def squeezed_with_mean(cls, nbar, n_sq, squeezing="phase", fock_cutoff=None):
        """
        Estado comprimido desplazado con n̄ total y sinh²r = n_sq.
        'phase' → r > 0; 'amplitude' → r < 0.

        α va sobre el eje imaginario, |α|² = n̄ − n_sq: con S(r) como está
        escrito y α real, el de r > 0 tiene B_η(0) > 0 para η = 0.4. Con
        α = i|α| el de r > 0 conserva B_η(0) < 0 hasta η = 0.4 y los dos
        siguen siendo super-poissonianos (Q de Mandel > 0).
        """
        if n_sq < 0 or nbar < n_sq:
            raise ParametroInvalido(
                f"Se necesita 0 ≤ n_sq ≤ n̄ (n̄={nbar!r}, n_sq={n_sq!r})"
            )
        r = math.asinh(math.sqrt(n_sq))
        if squeezing == "amplitude":
            r = -r
        elif squeezing != "phase":
            raise ParametroInvalido(
                f"squeezing debe ser 'phase' o 'amplitude', no {squeezing!r}"
            )
        return cls.squeezed(1j * math.sqrt(nbar - n_sq), r, fock_cutoff)

    @classmethod
    def twin_beam_from_gain(cls, gain, fock_cutoff=None):
        """|λ|² = 1 − 1/G, λ real."""
        if gain < 1:
            raise ParametroInvalido(f"La ganancia debe ser ≥ 1, no {gain!r}")
        return cls.twin_beam(math.sqrt(1.0 - 1.0 / gain), fock_cutoff)

    # ---- propiedades ----
    @property
    def is_single_mode(self):
        return self.kind is not StateKind.TWIN_BEAM

    def gain(self):
        if self.kind is not StateKind.TWIN_BEAM:
            raise EstadoNoSoportado("La ganancia solo aplica a twin beam")
        return 1.0 / (1.0 - abs(self.lam) ** 2)

    def mean_photons(self):
        """n̄ analítico (por modo para twin beam)."""
        mod2 = abs(self.alpha) ** 2
        if self.kind is StateKind.COHERENT:
            return mod2
        if self.kind is StateKind.SQUEEZED:
            return mod2 + math.sinh(self.r) ** 2
        if self.kind is StateKind.EVEN_CAT:
            return mod2 * math.tanh(mod2)
        lam2 = abs(self.lam) ** 2
        return lam2 / (1.0 - lam2)

    @property
    def label(self):
        if self.kind is StateKind.COHERENT:
            return f"coherent(alpha={format_complex(self.alpha)})"
        if self.kind is StateKind.SQUEEZED:
            return f"squeezed(alpha={format_complex(self.alpha)}, r={self.r:.6g})"
        if self.kind is StateKind.EVEN_CAT:
            return f"even_cat(alpha={format_complex(self.alpha)})"
        return f"twin_beam(lambda={format_complex(self.lam)})"

    # ---- serialización ----
    def to_dict(self):
        data = {"kind": self.kind.value}
        if self.kind is StateKind.TWIN_BEAM:
            data["lambda"] = [self.lam.real, self.lam.imag]
        else:
            data["alpha"] = [self.alpha.real, self.alpha.imag]
        if self.kind is StateKind.SQUEEZED:
            data["r"] = self.r
        if self.fock_cutoff is not None:
            data["fock_cutoff"] = int(self.fock_cutoff)
        return data

    @classmethod
    def from_dict(cls, data):
        def _complex(value):
            if isinstance(value, (list, tuple)):
                return complex(value[0], value[1])
            return complex(value)

        kind = StateKind(data["kind"])
        cutoff = data.get("fock_cutoff")
        if kind is StateKind.TWIN_BEAM:
            return cls.twin_beam(_complex(data["lambda"]), cutoff)
        return cls(kind, alpha=_complex(data.get("alpha", 0.0)),
                   r=float(data.get("r", 0.0)), fock_cutoff=cutoff)


@dataclass(frozen=True, eq=False)
class PhotonDist:
    """Distribución de número de fotones p(n), n = 0..N."""

    probs: np.ndarray
    label: str = ""

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float, copy=True)
        if probs.ndim != 1 or probs.size == 0:
            raise ParametroInvalido("probs debe ser un arreglo 1-D no vacío")
        if np.any(probs < -MASS_TOLERANCE) or np.any(probs > 1.0 + MASS_TOLERANCE):
            raise ParametroInvalido("Las probabilidades deben estar en [0, 1]")
        if probs.sum() > 1.0 + MASS_TOLERANCE:
            raise ParametroInvalido(f"Masa total {probs.sum():.15f} mayor que 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def cutoff(self):
        return self.probs.size - 1

    @property
    def deficit(self):
        return 1.0 - math.fsum(self.probs)

    def mean(self):
        return math.fsum(np.arange(self.probs.size) * self.probs)

    def to_frame(self):
        return pd.DataFrame({"n": np.arange(self.probs.size), "p": self.probs})


# --------------------------------------------------------------------
#                      AMPLITUDES DE FOCK
# --------------------------------------------------------------------
def _coherent_amplitudes(alpha, size):
    n = np.arange(size)
    mod = abs(alpha)
    if mod == 0:
        amps = np.zeros(size, dtype=complex)
        amps[0] = 1.0
        return amps
    log_mod = -0.5 * mod * mod + n * math.log(mod) - 0.5 * gammaln(n + 1.0)
    return np.exp(log_mod) * np.exp(1j * n * cmath.phase(alpha))


def _even_cat_amplitudes(alpha, size):
    amps = 2.0 * _coherent_amplitudes(alpha, size)
    amps[1::2] = 0.0
    norm = math.sqrt(2.0 * (1.0 + math.exp(-2.0 * abs(alpha) ** 2)))
    return amps / norm


def _squeezed_amplitudes(alpha, r, size):
    # [(a−α)cosh r − (a†−α*)sinh r]|ψ⟩ = 0 → recurrencia de dos términos
    t = math.tanh(r)
    gamma = alpha - alpha.conjugate() * t
    amps = np.zeros(size, dtype=complex)
    amps[0] = cmath.exp(-0.5 * abs(alpha) ** 2 + 0.5 * alpha.conjugate() ** 2 * t) \
        / math.sqrt(math.cosh(r))
    if size > 1:
        amps[1] = gamma * amps[0]
    for n in range(1, size - 1):
        amps[n + 1] = (gamma * amps[n] + t * math.sqrt(n) * amps[n - 1]) / math.sqrt(n + 1)
    return amps


def _amplitudes(state, size):
    if state.kind is StateKind.COHERENT:
        return _coherent_amplitudes(state.alpha, size)
    if state.kind is StateKind.SQUEEZED:
        return _squeezed_amplitudes(state.alpha, state.r, size)
    if state.kind is StateKind.EVEN_CAT:
        return _even_cat_amplitudes(state.alpha, size)
    raise EstadoNoSoportado(
        "photon_dist no acepta twin beam; usar twin_joint_photon_dist"
    )


def _auto_cutoff(state):
    size = MIN_CUTOFF + 1
    while True:
        probs = np.abs(_amplitudes(state, size)) ** 2
        tail = 1.0 - np.cumsum(probs)
        ok = np.flatnonzero(tail < MASS_TOLERANCE)
        if ok.size:
            return max(MIN_CUTOFF, int(ok[0]))
        if size > MAX_CUTOFF:
            raise CorteInsuficiente(
                f"{state.label}: la cola no baja de {MASS_TOLERANCE} antes de n={MAX_CUTOFF}"
            )
        size = 2 * size
        logger.debug("%s: ampliando corte de Fock a %d", state.label, size - 1)


def fock_cutoff(state):
    """Corte efectivo del estado (explícito o automático)."""
    if state.fock_cutoff is not None:
        return int(state.fock_cutoff)
    if state.kind is StateKind.TWIN_BEAM:
        lam2 = abs(state.lam) ** 2
        if lam2 == 0:
            return MIN_CUTOFF
        needed = math.ceil(math.log(MASS_TOLERANCE) / math.log(lam2))
        return max(MIN_CUTOFF, needed)
    return _auto_cutoff(state)


def fock_amplitudes(state):
    """⟨n|ψ⟩ para n = 0..corte (estados de un modo)."""
    cutoff = fock_cutoff(state)
    return _amplitudes(state, cutoff + 1)


# --------------------------------------------------------------------
#                  DISTRIBUCIONES DE NÚMERO
# --------------------------------------------------------------------
def photon_dist(state):
    """p(n) = |⟨n|ψ⟩|² truncada en el corte; el déficit se reporta, no se renormaliza."""
    if state.kind is StateKind.TWIN_BEAM:
        raise EstadoNoSoportado(
            "photon_dist no acepta twin beam; usar twin_joint_photon_dist"
        )
    if state.kind is StateKind.COHERENT:
        probs = poisson.pmf(np.arange(fock_cutoff(state) + 1), abs(state.alpha) ** 2)
    else:
        probs = np.abs(fock_amplitudes(state)) ** 2
        if state.kind is StateKind.EVEN_CAT:
            probs[1::2] = 0.0
    dist = PhotonDist(probs, label=state.label)
    if dist.deficit > MASS_TOLERANCE:
        raise CorteInsuficiente(
            f"{state.label}: corte {dist.cutoff} deja masa faltante {dist.deficit:.3e}"
        )
    return dist


def twin_joint_photon_dist(state):
    """
    P(n, n) = (1−|λ|²)|λ|^(2n) del twin beam normalizado. Es también la
    marginal térmica de cada modo.
    """
    if state.kind is not StateKind.TWIN_BEAM:
        raise EstadoNoSoportado("twin_joint_photon_dist solo acepta twin beam")
    n = np.arange(fock_cutoff(state) + 1)
    lam2 = abs(state.lam) ** 2
    probs = (1.0 - lam2) * lam2 ** n
    dist = PhotonDist(probs, label=state.label)
    if dist.deficit > MASS_TOLERANCE:
        raise CorteInsuficiente(
            f"{state.label}: corte {dist.cutoff} deja masa faltante {dist.deficit:.3e}"
        )
    return dist


def bernoulli_convolve(p, eta):
    """p_η(n) = Σ_k C(k,n) η^n (1−η)^(k−n) p(k), con la misma longitud que p."""
    check_eta(eta)
    if p.deficit > MASS_TOLERANCE:
        raise CorteInsuficiente(
            f"{p.label}: masa faltante {p.deficit:.3e} antes de convolucionar"
        )
    if eta == 1.0:
        return p
    size = p.probs.size
    k = np.arange(size)
    # weights[n, k] = P(n detectados | k fotones)
    weights = binom.pmf(k[:, None], k[None, :], eta)
    probs = weights @ p.probs
    return PhotonDist(np.clip(probs, 0.0, 1.0), label=f"{p.label} | eta={eta:g}")


# --------------------------------------------------------------------
#                  DENSIDADES DE CUADRATURA
# --------------------------------------------------------------------
def _normal_pdf(x, mean, var):
    return np.exp(-(x - mean) ** 2 / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def quadrature_pdf(state, phi, x):
    """Densidad ideal (η = 1) de x_φ."""
    return quadrature_pdf_noisy(state, phi, x, 1.0)


def quadrature_pdf_noisy(state, phi, x, eta):
    """
    Densidad de la cuadratura reescalada x = x₀ + g, g ~ N(0, Δ²_η).
    Para η = 1 coincide con quadrature_pdf.
    """
    if not state.is_single_mode:
        raise EstadoNoSoportado("quadrature_pdf solo acepta estados de un modo")
    extra = noise_variance(eta)
    phi = np.asarray(phi, dtype=float)
    x = np.asarray(x, dtype=float)
    rotated = state.alpha * np.exp(-1j * phi)
    mean_x = np.real(rotated)

    if state.kind is StateKind.COHERENT:
        return _normal_pdf(x, mean_x, 0.25 + extra)

    if state.kind is StateKind.SQUEEZED:
        var = 0.25 * (math.exp(2 * state.r) * np.cos(phi) ** 2
                      + math.exp(-2 * state.r) * np.sin(phi) ** 2)
        return _normal_pdf(x, mean_x, var + extra)

    # gato par: dos gaussianas más el término de interferencia
    mean_p = np.imag(rotated)
    var = 0.25 + extra
    mod2 = abs(state.alpha) ** 2
    norm = 2.0 * (1.0 + math.exp(-2.0 * mod2))
    cross = (2.0 * np.exp(-2.0 * mod2 - (x * x - mean_p * mean_p) / (2.0 * var))
             * np.cos(mean_p * x / var) / np.sqrt(2.0 * np.pi * var))
    return (_normal_pdf(x, mean_x, var) + _normal_pdf(x, -mean_x, var) + cross) / norm


def twin_joint_pdf(lam, eta, x1, x2, phi1, phi2):
    """Densidad conjunta homodina del twin beam con ruido de eficiencia."""
    lam = check_lambda(lam)
    four_delta = 4.0 * noise_variance(eta)
    z = np.exp(-1j * (np.asarray(phi1, dtype=float) + np.asarray(phi2, dtype=float))) * lam
    mod2 = np.abs(z) ** 2
    d_plus = np.abs(1.0 + z) ** 2 / (1.0 - mod2) + four_delta
    d_minus = np.abs(1.0 - z) ** 2 / (1.0 - mod2) + four_delta
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    expo = -(x1 + x2) ** 2 / d_plus - (x1 - x2) ** 2 / d_minus
    return 2.0 * np.exp(expo) / (np.pi * np.sqrt(d_plus * d_minus))


def twin_sum_difference_variances(lam, eta, phi_sum):
    """Varianzas de u = x₁+x₂ y v = x₁−x₂ para una fase total φ₁+φ₂."""
    lam = check_lambda(lam)
    four_delta = 4.0 * noise_variance(eta)
    z = np.exp(-1j * np.asarray(phi_sum, dtype=float)) * lam
    mod2 = np.abs(z) ** 2
    var_u = 0.5 * (np.abs(1.0 + z) ** 2 / (1.0 - mod2) + four_delta)
    var_v = 0.5 * (np.abs(1.0 - z) ** 2 / (1.0 - mod2) + four_delta)
    return var_u, var_v


# --------------------------------------------------------------------
#                  VALORES TEÓRICOS (ORÁCULOS)
# --------------------------------------------------------------------
def _three_point(probs, n):
    return (n + 2) * probs[n] * probs[n + 2] - (n + 1) * probs[n + 1] ** 2


def theoretical_B(state, eta, n):
    """B_η(n) desde la distribución exacta convolucionada (η = 1 da B(n))."""
    dist = bernoulli_convolve(photon_dist(state), eta)
    if int(n) != n or n < 0:
        raise ParametroInvalido(f"n debe ser entero ≥ 0, no {n!r}")
    if n + 2 > dist.cutoff:
        raise CorteInsuficiente(f"n+2={n + 2} supera el corte {dist.cutoff}")
    return float(_three_point(dist.probs, int(n)))


def theoretical_B_curve(state, eta, n_max):
    """B_η(n) para n = 0..n_max−2 (misma rejilla que compute_B)."""
    dist = bernoulli_convolve(photon_dist(state), eta)
    if n_max > dist.cutoff:
        raise CorteInsuficiente(f"n_max={n_max} supera el corte {dist.cutoff}")
    n = np.arange(n_max - 1)
    p = dist.probs
    return (n + 2) * p[n] * p[n + 2] - (n + 1) * p[n + 1] ** 2


def theoretical_mandel_Q(state, eta, n_max=None):
    """
    Q_η de Mandel de la distribución convolucionada; con `n_max` se trunca
    igual que la estimación. Sin truncar, Q_η = η·Q.
    """
    probs = bernoulli_convolve(photon_dist(state), eta).probs
    if n_max is not None:
        if n_max > probs.size - 1:
            raise CorteInsuficiente(f"n_max={n_max} supera el corte {probs.size - 1}")
        probs = probs[: n_max + 1]
    n = np.arange(probs.size, dtype=float)
    mean = math.fsum(n * probs)
    if not mean > 0:
        raise ParametroInvalido("Q de Mandel indefinido para ⟨n⟩ = 0")
    return (math.fsum(n * n * probs) - mean * mean) / mean - 1.0


def theoretical_C(lam, eta):
    """C_η = −2η²|λ|²/(1−|λ|²)."""
    lam = check_lambda(lam)
    check_eta(eta)
    lam2 = abs(lam) ** 2
    return -2.0 * eta ** 2 * lam2 / (1.0 - lam2)


def twin_beam_moments(lam, eta):
    """
    Momentos de número del twin beam con pérdidas (adelgazamiento binomial
    de cada modo): tags n1, n2, n1^2, n2^2, n1n2.
    """
    lam = check_lambda(lam)
    check_eta(eta)
    lam2 = abs(lam) ** 2
    nbar = lam2 / (1.0 - lam2)
    second = 2.0 * nbar ** 2 + nbar   # ⟨n²⟩ = ⟨n₁n₂⟩ del estado ideal
    mean = eta * nbar
    square = eta ** 2 * second + eta * (1.0 - eta) * nbar
    return {
        "n1": mean,
        "n2": mean,
        "n1^2": square,
        "n2^2": square,
        "n1n2": eta ** 2 * second,
    }
