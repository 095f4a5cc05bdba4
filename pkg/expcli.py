"""
Corridas de experimentos simulados: configuración JSON, presets de las
figuras, orquestación muestreo → estimación → criterio y CLI.

Uso:
    python expcli.py list
    python expcli.py preset fig4 --desk --seed 42 --out resultados
    python expcli.py run experimentos.json
"""

import argparse
import json
import logging
import math
import sys
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
from rapidfuzz import fuzz, process

from errores import (ConfigInvalida, ConflictoModo, RechazoEstimador, TomografiaError,
                     check_required_keys)
from nctest import DEFAULT_K, compute_B, compute_mandel_Q, sweep_C_vs_eta, sweep_frame
from registro import configurar_registro, quitar_archivo
from sampler import DEFAULT_CHUNK, sample_single
from specfun import DEFAULT_MAX_ORDER
from states import StateKind, StateModel, theoretical_B_curve, theoretical_mandel_Q
from tomo import DEFAULT_BLOCKS, MODES, estimate_photon_dist

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATOR = 3
EXIT_IO = 4

REQUIRED_KEYS = ("name", "state", "eta", "samples", "seed")
DEFAULT_SEED = 20_240_517
DESK_FACTOR = 10
FUZZY_CUTOFF = 80


# --------------------------------------------------------------------
#                  FUNCIONES AUXILIARES Y DE FORMATO
# --------------------------------------------------------------------
def normalize_name(s):
    """Quita tildes, pasa a minúsculas y elimina espacios."""
    s = str(s).strip().lower()
    s = "".join(c for c in unicodedata.normalize("NFKD", s)
                if unicodedata.category(c) != "Mn")
    return "".join(s.split())


def suggest(name, choices, cutoff=FUZZY_CUTOFF):
    """Coincidencia más cercana en `choices` si el score (0–100) llega a `cutoff`."""
    choices = list(choices)
    if not choices:
        return None
    best, score, _ = process.extractOne(str(name), choices, scorer=fuzz.WRatio)
    if score >= cutoff:
        return best
    logger.warning("Sin sugerencia para %r (mejor %r con score %.0f)", name, best, score)
    return None


def _unknown(what, name, choices):
    hint = suggest(name, choices)
    message = f"{what} desconocido: {name!r}"
    if hint is not None:
        message += f"; ¿quisiste decir {hint!r}?"
    return ConfigInvalida(message)


def _as_int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigInvalida(f"'{key}' debe ser entero, no {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigInvalida(f"'{key}' debe ser ≥ {minimum}, no {value}")
    return value


def _as_eta(value, key="eta"):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not (0.0 < value <= 1.0):
        raise ConfigInvalida(f"'{key}' debe estar en (0, 1], no {value!r}")
    return float(value)


def _complex_field(value, key):
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    raise ConfigInvalida(f"'{key}' debe ser real o [re, im], no {value!r}")


# --------------------------------------------------------------------
#                        ESTADOS DESDE CONFIG
# --------------------------------------------------------------------
STATE_KEYS = {
    "coherent": ("kind", "alpha", "mean_photons"),
    "squeezed": ("kind", "alpha", "r", "mean_photons", "squeezing_photons", "squeezing"),
    "even_cat": ("kind", "alpha", "mean_photons"),
    "twin_beam": ("kind", "lambda", "lambda_sq", "gain"),
}


def build_state(spec):
    """StateModel a partir del dict `state` de una configuración."""
    if not isinstance(spec, dict):
        raise ConfigInvalida(f"'state' debe ser un objeto, no {spec!r}")
    check_required_keys(spec, ["kind"], name="state")
    kind = spec["kind"]
    if kind not in STATE_KEYS:
        raise _unknown("Tipo de estado", kind, STATE_KEYS)
    for key in spec:
        if key not in STATE_KEYS[kind]:
            raise _unknown(f"Clave de {kind}", key, STATE_KEYS[kind])

    try:
        if kind == StateKind.COHERENT.value:
            if "alpha" in spec:
                return StateModel.coherent(_complex_field(spec["alpha"], "alpha"))
            check_required_keys(spec, ["mean_photons"], name="state")
            return StateModel.coherent(math.sqrt(spec["mean_photons"]))

        if kind == StateKind.EVEN_CAT.value:
            if "alpha" in spec:
                return StateModel.even_cat(_complex_field(spec["alpha"], "alpha"))
            check_required_keys(spec, ["mean_photons"], name="state")
            return StateModel.even_cat_with_mean(spec["mean_photons"])

        if kind == StateKind.SQUEEZED.value:
            if "alpha" in spec or "r" in spec:
                check_required_keys(spec, ["alpha", "r"], name="state")
                return StateModel.squeezed(_complex_field(spec["alpha"], "alpha"),
                                           float(spec["r"]))
            check_required_keys(spec, ["mean_photons", "squeezing_photons"], name="state")
            return StateModel.squeezed_with_mean(
                spec["mean_photons"], spec["squeezing_photons"],
                spec.get("squeezing", "phase"),
            )

        if "lambda" in spec:
            return StateModel.twin_beam(_complex_field(spec["lambda"], "lambda"))
        if "lambda_sq" in spec:
            return StateModel.twin_beam(math.sqrt(spec["lambda_sq"]))
        check_required_keys(spec, ["gain"], name="state")
        return StateModel.twin_beam_from_gain(spec["gain"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigInvalida):
            raise
        raise ConfigInvalida(f"Estado inválido {spec!r}: {exc}") from exc


def default_n_max(state):
    """2·n̄ + 10, acotado por el orden máximo del kernel."""
    return min(int(round(2.0 * state.mean_photons())) + 10, DEFAULT_MAX_ORDER)


# --------------------------------------------------------------------
#                          CONFIGURACIÓN
# --------------------------------------------------------------------
@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    state: dict
    eta: float
    samples: int
    seed: int
    mode: str = "noisy_state"
    n_max: int = None
    n_blocks: int = DEFAULT_BLOCKS
    out_dir: str = "resultados"
    sweep: tuple = None
    k: float = DEFAULT_K
    chunk_size: int = DEFAULT_CHUNK
    xlsx: bool = False

    def state_model(self):
        return build_state(self.state)

    @property
    def is_sweep(self):
        return self.state.get("kind") == StateKind.TWIN_BEAM.value

    def etas(self):
        return list(self.sweep) if self.sweep else [self.eta]

    def resolved_n_max(self):
        return self.n_max if self.n_max is not None else default_n_max(self.state_model())

    def to_dict(self):
        return {
            "name": self.name,
            "state": dict(self.state),
            "eta": self.eta,
            "samples": self.samples,
            "seed": self.seed,
            "mode": self.mode,
            "n_max": self.n_max,
            "n_blocks": self.n_blocks,
            "out_dir": self.out_dir,
            "sweep": None if self.sweep is None else list(self.sweep),
            "k": self.k,
            "chunk_size": self.chunk_size,
            "xlsx": self.xlsx,
        }

    @classmethod
    def from_dict(cls, data):
        """Valida y construye; los errores de esquema son ConfigInvalida."""
        if not isinstance(data, dict):
            raise ConfigInvalida(f"Una configuración debe ser un objeto JSON, no {type(data).__name__}")
        check_required_keys(data, REQUIRED_KEYS)
        known = tuple(cls.__dataclass_fields__)
        for key in data:
            if key not in known:
                raise _unknown("Clave de configuración", key, known)

        name = str(data["name"]).strip()
        if not name:
            raise ConfigInvalida("'name' no puede estar vacío")
        state = build_state(data["state"])
        eta = _as_eta(data["eta"])
        n_blocks = _as_int(data.get("n_blocks", DEFAULT_BLOCKS), "n_blocks", minimum=3)
        samples = _as_int(data["samples"], "samples", minimum=10 * n_blocks)
        seed = _as_int(data["seed"], "seed", minimum=0)
        chunk_size = _as_int(data.get("chunk_size", DEFAULT_CHUNK), "chunk_size", minimum=1)

        mode = data.get("mode", "noisy_state")
        if mode not in MODES:
            raise _unknown("Modo", mode, MODES)
        if mode == "true_state" and eta <= 0.5:
            # rechazo del estimador, no de esquema
            raise ConflictoModo(
                f"{name}: true_state necesita η > 0.5 (el kernel diverge); se pidió η={eta}"
            )

        n_max = data.get("n_max")
        if n_max is not None:
            n_max = _as_int(n_max, "n_max", minimum=2)
            if n_max > DEFAULT_MAX_ORDER:
                raise ConfigInvalida(f"'n_max' no puede superar {DEFAULT_MAX_ORDER}")

        sweep = data.get("sweep")
        if sweep is not None:
            if state.is_single_mode:
                raise ConfigInvalida("'sweep' solo aplica a twin_beam")
            if not isinstance(sweep, (list, tuple)) or not sweep:
                raise ConfigInvalida("'sweep' debe ser una lista no vacía de η")
            sweep = tuple(_as_eta(value, "sweep") for value in sweep)

        k = data.get("k", DEFAULT_K)
        if isinstance(k, bool) or not isinstance(k, (int, float)) or not k > 0:
            raise ConfigInvalida(f"'k' debe ser > 0, no {k!r}")

        return cls(
            name=name,
            state=dict(data["state"]),
            eta=eta,
            samples=samples,
            seed=seed,
            mode=mode,
            n_max=n_max,
            n_blocks=n_blocks,
            out_dir=str(data.get("out_dir", "resultados")),
            sweep=sweep,
            k=float(k),
            chunk_size=chunk_size,
            xlsx=bool(data.get("xlsx", False)),
        )


def load_configs(path):
    """Lee un objeto o un lote {"experiments": [...]} desde JSON."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalida(f"{path}: JSON inválido ({exc})") from exc
    items = raw["experiments"] if isinstance(raw, dict) and "experiments" in raw else [raw]
    if not isinstance(items, list) or not items:
        raise ConfigInvalida(f"{path}: 'experiments' debe ser una lista no vacía")
    configs = [ExperimentConfig.from_dict(item) for item in items]
    names = pd.Series([c.name for c in configs])
    repeated = sorted(names[names.duplicated()].unique())
    if repeated:
        raise ConfigInvalida(f"{path}: nombres repetidos en el lote: {repeated}")
    return configs


# --------------------------------------------------------------------
#                             PRESETS
# --------------------------------------------------------------------
_CAT = {"kind": "even_cat", "mean_photons": 5}
_PHASE_SQ = {"kind": "squeezed", "mean_photons": 5, "squeezing_photons": 3, "squeezing": "phase"}
_AMPL_SQ = {"kind": "squeezed", "mean_photons": 5, "squeezing_photons": 3, "squeezing": "amplitude"}
_FIG9_ETAS = [round(1.0 - 0.05 * i, 2) for i in range(15)]


def _preset(name, state, eta, samples, mode="noisy_state", **extra):
    base = {"name": name, "state": state, "eta": eta, "samples": samples,
            "seed": DEFAULT_SEED, "mode": mode}
    base.update(extra)
    return base


PRESETS = {
    "fig1": _preset("fig1", _CAT, 0.8, 10_000_000, "true_state"),
    "fig2": _preset("fig2", _PHASE_SQ, 0.8, 10_000_000, "true_state"),
    "fig3": _preset("fig3", _AMPL_SQ, 0.8, 10_000_000, "true_state"),
    "fig4": _preset("fig4", _CAT, 0.8, 10_000_000),
    "fig5": _preset("fig5", _PHASE_SQ, 0.8, 10_000_000),
    "fig6": _preset("fig6", _AMPL_SQ, 0.8, 10_000_000),
    "fig7": _preset("fig7", _PHASE_SQ, 0.4, 50_000_000),
    "fig9": _preset("fig9", {"kind": "twin_beam", "lambda_sq": 0.5}, 1.0, 400_000,
                    sweep=_FIG9_ETAS),
}


# (completa, escritorio): con muestras / 10 los errores crecen ≈ √10
_BAND = "estimación a 4σ de la teoría para n ≤ 8"
_DESK_NOTE = "; σ ≈ √10 mayor, significancia no garantizada"
PRESET_TOLERANCES = {
    "fig1": (_BAND, _BAND + _DESK_NOTE),
    "fig2": (_BAND, _BAND + _DESK_NOTE),
    "fig3": (_BAND, _BAND + _DESK_NOTE),
    "fig4": (_BAND + "; min significancia ≤ −3", _BAND + "; min significancia ≤ −3"),
    "fig5": (_BAND, _BAND + _DESK_NOTE),
    "fig6": (_BAND, _BAND + _DESK_NOTE),
    "fig7": ("B_η(0) < 0 a más de 5σ",
             "B_η(0) a 3σ de la teoría; negatividad no garantizada"),
    "fig9": ("C_η a 4σ de −2η²; C_0.3 < 0 a 3σ; σ máx/mín < 2",
             "C_η a 4σ de −2η²" + _DESK_NOTE),
}


def _desk(config):
    desk = dict(config)
    desk["name"] = f"{config['name']}-desk"
    desk["samples"] = config["samples"] // DESK_FACTOR
    return desk


def get_preset(name, desk=False, seed=None, out_dir=None):
    """ExperimentConfig de un preset; acepta 'fig4', 'Fig 4' o 'fig4-desk'."""
    key = normalize_name(name)
    if key.endswith("-desk"):
        key, desk = key[: -len("-desk")], True
    if key not in PRESETS:
        raise _unknown("Preset", name, PRESETS)
    data = _desk(PRESETS[key]) if desk else dict(PRESETS[key])
    if seed is not None:
        data["seed"] = seed
    if out_dir is not None:
        data["out_dir"] = str(out_dir)
    return ExperimentConfig.from_dict(data)


def list_presets():
    """
    Catálogo: cada preset de figura y su variante de escritorio, con la
    tolerancia de aceptación de cada una (las de escritorio son más laxas).
    """
    rows = []
    for key in PRESETS:
        for desk in (False, True):
            config = get_preset(key, desk=desk)
            rows.append({
                "name": config.name,
                "figure": key,
                "desk": desk,
                "state": json.dumps(config.state, sort_keys=True),
                "eta": config.eta,
                "samples": config.samples,
                "mode": config.mode,
                "sweep": "" if config.sweep is None else f"{max(config.sweep)}→{min(config.sweep)}",
                "tolerance": PRESET_TOLERANCES[key][int(desk)],
            })
    return pd.DataFrame(rows)


# --------------------------------------------------------------------
#                             CORRIDAS
# --------------------------------------------------------------------
@dataclass
class RunResult:
    config: ExperimentConfig
    table: pd.DataFrame
    reports: list
    paths: dict = field(default_factory=dict)
    estimate: object = None


def _versions():
    return {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__}


def _run_single(config, workers):
    state = config.state_model()
    n_max = config.resolved_n_max()
    data = sample_single(state, config.eta, config.samples, config.seed,
                         chunk_size=config.chunk_size, workers=workers)
    est = estimate_photon_dist(data, config.mode, n_max, config.n_blocks, workers=workers)
    report = compute_B(est, config.k)
    # B(n) verdadero o B_η(n) según lo que reconstruye el modo
    theory_eta = 1.0 if config.mode == "true_state" else config.eta
    table = pd.DataFrame({
        "n": report.index,
        "theory": theoretical_B_curve(state, theory_eta, n_max),
        "estimate": report.values,
        "stderr": report.stderr,
    })
    # Q de Mandel con la misma p̂ truncada, para comparar con B
    try:
        mandel = compute_mandel_Q(est, config.k)
    except RechazoEstimador as exc:
        logger.warning("%s: sin Q de Mandel (%s)", config.name, exc)
        return table, [report], est
    if state.mean_photons() > 0:
        mandel.metadata["theory"] = theoretical_mandel_Q(state, theory_eta, n_max)
    return table, [report, mandel], est


def _run_sweep(config, workers):
    state = config.state_model()
    reports = sweep_C_vs_eta(state.lam, config.etas(), config.samples, config.seed,
                             n_blocks=config.n_blocks, k=config.k, workers=workers)
    return sweep_frame(reports), reports, None


def run(config, workers=None):
    """
    Ejecuta una configuración y escribe <name>.csv, <name>.json, <name>.log
    (y <name>.xlsx si se pidió) en `config.out_dir`.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / f"{config.name}.csv",
        "json": out / f"{config.name}.json",
        "log": out / f"{config.name}.log",
    }
    handler = configurar_registro(archivo=paths["log"])
    started = datetime.now()
    try:
        logger.info("Inicio de %s: %s", config.name, json.dumps(config.to_dict(), sort_keys=True))
        if config.is_sweep:
            table, reports, est = _run_sweep(config, workers)
        else:
            table, reports, est = _run_single(config, workers)

        table.to_csv(paths["csv"], index=False, float_format="%.17g")
        payload = {
            "config": config.to_dict(),
            "versions": _versions(),
            "started": started.isoformat(timespec="seconds"),
            "finished": datetime.now().isoformat(timespec="seconds"),
            "reports": [report.to_dict() for report in reports],
            "table": table.to_dict(orient="list"),
        }
        if est is not None:
            payload["estimate"] = est.to_dict()
        paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True),
                                 encoding="utf-8")

        if config.xlsx:
            paths["xlsx"] = out / f"{config.name}.xlsx"
            with pd.ExcelWriter(paths["xlsx"], engine="openpyxl") as writer:
                table.to_excel(writer, sheet_name="criterio", index=False)
                if est is not None:
                    est.to_frame().to_excel(writer, sheet_name="estimacion", index=False)
                pd.DataFrame([config.to_dict()]).astype(str).to_excel(
                    writer, sheet_name="config", index=False
                )

        verdict = any(report.verdict for report in reports)
        logger.info("Fin de %s: %s, archivos en %s", config.name,
                    "no clásico" if verdict else "clásico", out)
    finally:
        quitar_archivo(handler)
    return RunResult(config=config, table=table, reports=reports, paths=paths, estimate=est)


# --------------------------------------------------------------------
#                               CLI
# --------------------------------------------------------------------
def _parser():
    parser = argparse.ArgumentParser(
        prog="expcli", description="Tomografía homodina simulada y criterios de no clasicidad."
    )
    parser.add_argument("--log-level", default=None, help="Nivel de log de consola.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_cmd = sub.add_parser("run", help="Ejecuta una configuración JSON (o un lote).")
    run_cmd.add_argument("config", type=Path)
    run_cmd.add_argument("--out", default=None, help="Sobrescribe out_dir.")
    run_cmd.add_argument("--workers", type=int, default=None)

    preset_cmd = sub.add_parser("preset", help="Ejecuta un preset de figura.")
    preset_cmd.add_argument("name")
    preset_cmd.add_argument("--desk", action="store_true", help="Muestras / 10.")
    preset_cmd.add_argument("--seed", type=int, default=None)
    preset_cmd.add_argument("--out", default=None)
    preset_cmd.add_argument("--workers", type=int, default=None)
    preset_cmd.add_argument("--xlsx", action="store_true")

    sub.add_parser("list", help="Lista los presets disponibles.")
    return parser


def _with_out(config, out):
    if out is None:
        return config
    data = config.to_dict()
    data["out_dir"] = str(out)
    return ExperimentConfig.from_dict(data)


def main(argv=None):
    args = _parser().parse_args(argv)
    configurar_registro(args.log_level)
    try:
        if args.command == "list":
            print(list_presets().to_string(index=False))
            return EXIT_OK
        if args.command == "preset":
            configs = [get_preset(args.name, desk=args.desk, seed=args.seed, out_dir=args.out)]
            if args.xlsx:
                data = configs[0].to_dict()
                data["xlsx"] = True
                configs = [ExperimentConfig.from_dict(data)]
        else:
            configs = [_with_out(c, args.out) for c in load_configs(args.config)]
        for config in configs:
            result = run(config, workers=args.workers)
            print(result.paths["csv"])
    except ConfigInvalida as exc:
        logger.error("Configuración inválida: %s", exc)
        return EXIT_CONFIG
    except RechazoEstimador as exc:
        logger.error("Estimación rechazada: %s", exc)
        return EXIT_ESTIMATOR
    except TomografiaError as exc:
        logger.error("Error en la corrida: %s", exc)
        return EXIT_ESTIMATOR
    except OSError as exc:
        logger.error("Error de E/S: %s", exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
