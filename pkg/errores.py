"""
Jerarquía de excepciones del paquete.

Todas derivan de ValueError: los chequeos de entrada lanzan errores con
mensajes descriptivos y el CLI los traduce a códigos de salida.
"""


# --------------------------------------------------------------------
#                        ERRORES BASE
# --------------------------------------------------------------------
class TomografiaError(ValueError):
    """Error base de la librería."""


class OrdenFueraDeRango(TomografiaError):
    """Orden de polinomio o de kernel mayor que el tope de las tablas."""


class EstadoNoSoportado(TomografiaError):
    """Tipo de estado no válido para la operación pedida."""


class CorteInsuficiente(TomografiaError):
    """El corte de Fock deja una masa faltante mayor que la tolerancia."""


class ParametroInvalido(TomografiaError):
    """Parámetro numérico fuera de su dominio (η, λ, semillas, conteos)."""


class DatasetInvalido(TomografiaError):
    """Dataset vacío, mal formado o con número de modos incorrecto."""


class ConfigInvalida(TomografiaError):
    """Configuración de experimento que no pasa la validación."""


# --------------------------------------------------------------------
#                  RECHAZOS DEL ESTIMADOR (exit 3)
# --------------------------------------------------------------------
class RechazoEstimador(TomografiaError):
    """El estimador se niega a producir un resultado confiable."""


class DominioKernel(RechazoEstimador):
    """Kernel de número con η ≤ 0.5: κ no está definido."""


class ConflictoModo(RechazoEstimador):
    """Modo de reconstrucción incompatible con la eficiencia de los datos."""


class CovarianzaDegenerada(RechazoEstimador):
    """Muy pocos bloques (o momentos faltantes) para propagar errores."""


# --------------------------------------------------------------------
#                          AVISOS
# --------------------------------------------------------------------
class PerdidaPrecision(UserWarning):
    """La cancelación interna supera el umbral configurado."""


def check_required_keys(mapping, required_keys, name="config"):
    """Lanza ConfigInvalida con la lista de claves que faltan en `mapping`."""
    missing = [key for key in required_keys if key not in mapping]
    if missing:
        raise ConfigInvalida(f"Al {name} le faltan las claves {missing}")
