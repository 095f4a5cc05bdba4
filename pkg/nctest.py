"""
Criterios de no clasicidad: B(n) / B_η(n) de un modo y C / C_η de dos modos,
con errores propagados a primer orden desde la covarianza por bloques.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from errores import CovarianzaDegenerada, ParametroInvalido, RechazoEstimador
from sampler import sample_twin
from states import check_eta, check_lambda, format_complex, theoretical_C
from tomo import DEFAULT_BLOCKS, MOMENT_TAGS, estimate_two_mode_moments

logger = logging.getLogger(__name__)

DEFAULT_K = 3.0
MIN_BLOCKS = 3
EXACT_TOLERANCE = 1e-15


class CriterionKind(str, Enum):
    SINGLE_MODE_B = "single_mode_B"
    TWO_MODE_C = "two_mode_C"
    MANDEL_Q = "mandel_Q"


_VALUE_COLUMNS = {
    CriterionKind.SINGLE_MODE_B: "B",
    CriterionKind.TWO_MODE_C: "C",
    CriterionKind.MANDEL_Q: "Q",
}


def _significance(values, stderr):
    values = np.asarray(values, dtype=float)
    stderr = np.asarray(stderr, dtype=float)
    out = np.full(values.shape, np.nan)
    mask = stderr > 0
    out[mask] = values[mask] / stderr[mask]
    return out


@dataclass(frozen=True, eq=False)
class CriterionReport:
    """
    Valores del criterio, errores y veredicto.

    Veredicto no clásico si alguna entrada con σ > 0 cumple valor < −k·σ,
    o si alguna entrada exacta (σ = 0) cumple valor < −EXACT_TOLERANCE.
    Con σ = 0 el ruido de redondeo (|valor| ≲ 1e−16) se lee como cero.
    """

    kind: CriterionKind
    values: np.ndarray
    stderr: np.ndarray
    index: np.ndarray
    k: float = DEFAULT_K
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.shape(self.values) != np.shape(self.stderr):
            raise ParametroInvalido("values y stderr deben tener la misma forma")
        if np.any(np.asarray(self.stderr) < 0):
            raise ParametroInvalido("stderr no puede ser negativo")
        if not self.k > 0:
            raise ParametroInvalido(f"k debe ser > 0, no {self.k!r}")

    @property
    def significance(self):
        return _significance(self.values, self.stderr)

    @property
    def verdict(self):
        values = np.asarray(self.values, dtype=float)
        stderr = np.asarray(self.stderr, dtype=float)
        threshold = np.where(stderr > 0, self.k * stderr, EXACT_TOLERANCE)
        return bool(np.any(values < -threshold))

    @property
    def index_name(self):
        if self.kind is CriterionKind.SINGLE_MODE_B:
            return "n"
        return self.metadata.get("index_name", "eta")

    def min_significance(self):
        sig = self.significance
        finite = sig[np.isfinite(sig)]
        return float(finite.min()) if finite.size else math.nan

    def to_frame(self):
        return pd.DataFrame({
            self.index_name: self.index,
            _VALUE_COLUMNS[self.kind]: self.values,
            "stderr": self.stderr,
            "significance": self.significance,
        })

    def to_dict(self):
        sig = self.significance
        return {
            "kind": self.kind.value,
            "k": self.k,
            "verdict": "nonclassical" if self.verdict else "classical",
            self.index_name: np.asarray(self.index).tolist(),
            "values": np.asarray(self.values, dtype=float).tolist(),
            "stderr": np.asarray(self.stderr, dtype=float).tolist(),
            # NaN no es JSON válido
            "significance": [None if math.isnan(s) else float(s) for s in sig],
            "metadata": self.metadata,
        }

    def to_json(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return Path(path)


def _check_k(k):
    if not k > 0:
        raise ParametroInvalido(f"k debe ser > 0, no {k!r}")
    return float(k)


def compute_B(est, k=DEFAULT_K):
    """
    B(n) = (n+2)p(n)p(n+2) − (n+1)p(n+1)² para n = 0..n_max−2, con p̂ de
    todo el conjunto de datos y σ² = gᵀΣg usando la covarianza por bloques.
    """
    k = _check_k(k)
    p = np.asarray(est.probs, dtype=float)
    if p.size < 3:
        raise ParametroInvalido("compute_B necesita al menos p(0), p(1), p(2)")
    if est.n_blocks < MIN_BLOCKS:
        raise CovarianzaDegenerada(
            f"La covarianza de B necesita al menos {MIN_BLOCKS} bloques; hay {est.n_blocks}"
        )
    cov = est.covariance()
    n = np.arange(p.size - 2)
    values = (n + 2) * p[n] * p[n + 2] - (n + 1) * p[n + 1] ** 2

    stderr = np.empty(n.size)
    for i in n:
        grad = np.array([(i + 2) * p[i + 2], -2.0 * (i + 1) * p[i + 1], (i + 2) * p[i]])
        sub = cov[i:i + 3, i:i + 3]
        stderr[i] = math.sqrt(max(float(grad @ sub @ grad), 0.0))

    report = CriterionReport(
        kind=CriterionKind.SINGLE_MODE_B,
        values=values,
        stderr=stderr,
        index=n,
        k=k,
        metadata={
            "label": est.label,
            "mode": est.mode,
            "eta": est.data_eta,
            "kernel_eta": est.kernel_eta,
            "n_samples": int(est.n_samples),
            "n_blocks": int(est.n_blocks),
            "seed": est.seed,
        },
    )
    logger.info("compute_B: %s -> %s (min significancia %.2f)", est.label,
                "no clásico" if report.verdict else "clásico", report.min_significance())
    return report


def compute_mandel_Q(est, k=DEFAULT_K):
    """
    Q = (⟨n²⟩ − ⟨n⟩²)/⟨n⟩ − 1 con los momentos de p̂(n) truncada en n_max.
    Q < 0 (sub-poissoniano) es no clásico; Q ≥ 0 no dice nada. El error
    usa la covarianza por bloques de todo p̂ con el gradiente de Q.
    """
    k = _check_k(k)
    p = np.asarray(est.probs, dtype=float)
    if est.n_blocks < MIN_BLOCKS:
        raise CovarianzaDegenerada(
            f"La covarianza de Q necesita al menos {MIN_BLOCKS} bloques; hay {est.n_blocks}"
        )
    n = np.arange(p.size, dtype=float)
    mean = math.fsum(n * p)
    if not mean > 0:
        raise RechazoEstimador(f"Q de Mandel indefinido: ⟨n⟩ = {mean:.3g} ≤ 0")
    var = math.fsum(n * n * p) - mean * mean
    value = var / mean - 1.0
    grad = (n * n - 2.0 * mean * n) / mean - var * n / mean ** 2
    stderr = math.sqrt(max(float(grad @ est.covariance() @ grad), 0.0))

    report = CriterionReport(
        kind=CriterionKind.MANDEL_Q,
        values=np.array([value]),
        stderr=np.array([stderr]),
        index=np.array([est.n_max]),
        k=k,
        metadata={
            "label": est.label,
            "mode": est.mode,
            "eta": est.data_eta,
            "kernel_eta": est.kernel_eta,
            "n_samples": int(est.n_samples),
            "n_blocks": int(est.n_blocks),
            "seed": est.seed,
            "index_name": "n_max",
        },
    )
    logger.info("compute_mandel_Q: %s -> Q=%.5g ± %.2g", est.label, value, stderr)
    return report


def compute_C(est, k=DEFAULT_K):
    """
    C = (⟨n₁²⟩ + ⟨n₂²⟩ − 2⟨n₁n₂⟩) − (⟨n₁⟩ − ⟨n₂⟩)² − (⟨n₁⟩ + ⟨n₂⟩).
    """
    k = _check_k(k)
    missing = [tag for tag in MOMENT_TAGS if tag not in est.moments]
    if missing:
        raise CovarianzaDegenerada(f"Faltan momentos para C: {missing}")
    if est.block_means.shape[0] < MIN_BLOCKS:
        raise CovarianzaDegenerada(
            f"La covarianza de C necesita al menos {MIN_BLOCKS} bloques; "
            f"hay {est.block_means.shape[0]}"
        )
    m1, m2, s1, s2, cross = (est.value(tag) for tag in MOMENT_TAGS)
    diff = m1 - m2
    value = (s1 + s2 - 2.0 * cross) - diff ** 2 - (m1 + m2)
    grad = np.array([-2.0 * diff - 1.0, 2.0 * diff - 1.0, 1.0, 1.0, -2.0])
    cov = est.covariance(MOMENT_TAGS)
    stderr = math.sqrt(max(float(grad @ cov @ grad), 0.0))

    report = CriterionReport(
        kind=CriterionKind.TWO_MODE_C,
        values=np.array([value]),
        stderr=np.array([stderr]),
        index=np.array([est.data_eta]),
        k=k,
        metadata={
            "label": est.label,
            "eta": est.data_eta,
            "n_samples": int(est.n_samples),
            "n_blocks": int(est.block_means.shape[0]),
            "seed": est.seed,
        },
    )
    logger.info("compute_C: %s, eta=%g -> C=%.5g ± %.2g", est.label, est.data_eta, value, stderr)
    return report


def sweep_sub_seed(seed, eta):
    """Sub-semilla determinista para cada η del barrido (η redondeado a 1e−6)."""
    entropy = [int(seed), int(round(float(eta) * 1_000_000))]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def sweep_C_vs_eta(lam, etas, count_per_eta, seed, *, n_blocks=DEFAULT_BLOCKS,
                   phase_policy="fluctuating", k=DEFAULT_K, workers=None):
    """Un dataset nuevo por η; reportes ordenados por η descendente."""
    lam = check_lambda(lam)
    etas = sorted({check_eta(eta) for eta in etas}, reverse=True)
    if not etas:
        raise ParametroInvalido("El barrido necesita al menos un η")
    reports = []
    for eta in etas:
        sub_seed = sweep_sub_seed(seed, eta)
        data = sample_twin(lam, eta, count_per_eta, sub_seed, phase_policy,
                           workers=workers)
        est = estimate_two_mode_moments(data, n_blocks, workers=workers)
        report = compute_C(est, k)
        report.metadata.update({
            "lambda": format_complex(lam),
            "sweep_seed": int(seed),
            "theory": theoretical_C(lam, eta),
        })
        reports.append(report)
    return reports


def sweep_frame(reports):
    """Tabla (eta, estimate, stderr, theory) de un barrido de C."""
    rows = []
    for report in reports:
        rows.append({
            "eta": report.metadata["eta"],
            "estimate": float(report.values[0]),
            "stderr": float(report.stderr[0]),
            "theory": report.metadata.get("theory", math.nan),
        })
    return pd.DataFrame(rows, columns=["eta", "estimate", "stderr", "theory"])
