"""Hiérarchie d'erreurs de feeder_analyzer.

Chaque erreur porte un code de sortie documenté, utilisé tel quel par la CLI:

    0  succès
    1  erreur inattendue
    2  erreur de lecture (fichier feeder/scénario/profil mal formé)
    3  erreur de validation (réseau, configuration, balayage vide)
    4  drapeau de convergence (au moins un pas de temps non convergé)
    5  erreur d'entrée/sortie (fichier manquant, bundle incomplet)
    6  erreur de métrique (référence indéfinie, durées incompatibles)
"""
from typing import Optional

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_CONVERGENCE = 4
EXIT_IO = 5
EXIT_METRICS = 6


class FeederAnalyzerError(Exception):
    """Erreur de base du projet."""
    exit_code = EXIT_UNEXPECTED

    def __init__(self, message: str, locus: Optional[str] = None):
        self.locus = locus
        if locus:
            message = f"{message} ({locus})"
        super().__init__(message)


# Lecture

class ParseError(FeederAnalyzerError):
    exit_code = EXIT_PARSE


class ProfileError(ParseError):
    pass


# Validation du réseau

class NetworkValidationError(FeederAnalyzerError):
    exit_code = EXIT_VALIDATION


class CycleDetected(NetworkValidationError):
    pass


class DisconnectedBus(NetworkValidationError):
    pass


class DanglingReference(NetworkValidationError):
    pass


class PhaseMismatch(NetworkValidationError):
    pass


class NonPositiveRating(NetworkValidationError):
    pass


class InvalidSetting(NetworkValidationError):
    pass


class SingularSegment(NetworkValidationError):
    pass


class ReversedRegulator(NetworkValidationError):
    pass


class ConfigurationError(FeederAnalyzerError):
    exit_code = EXIT_VALIDATION


class ZeroPowerFactor(ConfigurationError):
    pass


class EmptySweep(ConfigurationError):
    pass


class UnknownOrder(ConfigurationError):
    pass


class EmptyList(ConfigurationError):
    pass


# Convergence

class ConvergenceError(FeederAnalyzerError):
    exit_code = EXIT_CONVERGENCE


class UnconvergedSolution(ConvergenceError):
    pass


class UnconvergedFundamental(ConvergenceError):
    pass


class ConvergenceFlagged(ConvergenceError):
    """Le run est terminé mais certains pas de temps sont marqués NotConverged."""


# Entrées/sorties

class BundleError(FeederAnalyzerError):
    exit_code = EXIT_IO


class MissingFile(BundleError):
    pass


class MissingBaseline(BundleError):
    pass


# Métriques

class MetricsError(FeederAnalyzerError):
    exit_code = EXIT_METRICS


class UndefinedBaseline(MetricsError):
    pass


class DurationMismatch(MetricsError):
    pass


class MissingFundamental(MetricsError):
    pass
