"""Configuración del logging (consola + archivo por corrida)."""

import logging
import os
from pathlib import Path

FORMATO = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

_consola = None


def configurar_registro(nivel=None, archivo=None):
    """
    Instala el handler de consola una sola vez y, si se pasa `archivo`,
    agrega un FileHandler para el log de la corrida. Devuelve ese handler
    (o None) para poder quitarlo al terminar.
    """
    global _consola
    raiz = logging.getLogger()
    # sin nivel explícito se respeta la consola ya instalada
    if nivel is not None or _consola is None:
        if nivel is None:
            nivel = os.environ.get("TOMONC_LOG_LEVEL", "INFO")
        if isinstance(nivel, str):
            nivel = logging.getLevelName(nivel.upper())
            if not isinstance(nivel, int):
                nivel = logging.INFO
        if _consola is None:
            _consola = logging.StreamHandler()
            _consola.setFormatter(logging.Formatter(FORMATO))
            raiz.addHandler(_consola)
        _consola.setLevel(nivel)
        raiz.setLevel(min(nivel, logging.INFO))

    if archivo is None:
        return None
    Path(archivo).parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(archivo, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(FORMATO))
    handler.setLevel(logging.DEBUG)
    raiz.addHandler(handler)
    return handler


def quitar_archivo(handler):
    """Cierra y desengancha el handler de archivo de una corrida."""
    if handler is None:
        return
    logging.getLogger().removeHandler(handler)
    handler.close()
