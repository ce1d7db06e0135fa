"""
Dependency Injection Container for ThieleKit.

Provides centralized service construction so commands and tests share one settings object.
"""

from typing import Callable, TypeVar

from .config import Settings, get_settings
from .services.backward import BackwardSolver
from .services.comparison import Comparison
from .services.exporter import Exporter
from .services.model_inspector import ModelInspector
from .services.model_loader import ModelLoader
from .services.simulator import Simulator

T = TypeVar("T")


class Container:
    """
    Dependency Injection Container.

    Services are singletons per container lifetime; `reset` drops them together with
    the cached settings.
    """

    _instances: dict[type, object] = {}

    @classmethod
    def get_settings(cls) -> Settings:
        """Get application settings instance."""
        return get_settings()

    @classmethod
    def _get(cls, service: Callable[[Settings], T], settings: Settings = None) -> T:
        if service not in cls._instances:
            cls._instances[service] = service(settings or cls.get_settings())
        return cls._instances[service]

    @classmethod
    def get_model_inspector(cls, settings: Settings = None) -> ModelInspector:
        return cls._get(ModelInspector, settings)

    @classmethod
    def get_simulator(cls, settings: Settings = None) -> Simulator:
        return cls._get(Simulator, settings)

    @classmethod
    def get_backward_solver(cls, settings: Settings = None) -> BackwardSolver:
        return cls._get(BackwardSolver, settings)

    @classmethod
    def get_comparison(cls, settings: Settings = None) -> Comparison:
        return cls._get(Comparison, settings)

    @classmethod
    def get_model_loader(cls, settings: Settings = None) -> ModelLoader:
        return cls._get(ModelLoader, settings)

    @classmethod
    def get_exporter(cls, settings: Settings = None) -> Exporter:
        return cls._get(Exporter, settings)

    @classmethod
    def reset(cls) -> None:
        """Reset all cached instances. Useful for testing."""
        cls._instances.clear()
        get_settings.cache_clear()
