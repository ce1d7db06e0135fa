"""
Pytest Configuration and Fixtures for ThieleKit tests.
"""

import logging
import sys
from pathlib import Path

import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.config import Settings
from app.dependencies import Container
from app.services.backward import BackwardSolverService
from app.services.comparison import ComparisonService
from app.services.exporter import ExporterService
from app.services.measure import MeasureService
from app.services.model_inspector import ModelInspectorService
from app.services.model_loader import ModelLoaderService
from app.services.simulator import SimulatorService

from tests.factories import endowment_model, term_model

MODELS_DIR = Path(__file__).parent.parent / "models"


@pytest.fixture(autouse=True)
def reset_container():
    """Reset the DI container before each test."""
    Container.reset()
    yield
    Container.reset()


@pytest.fixture
def settings(tmp_path):
    """Settings with the log file inside the test's temporary directory."""
    return Settings(LOG_FILE=str(tmp_path / "logs" / "thielekit.log"), WORKERS=2)


@pytest.fixture
def inspector(settings):
    return ModelInspectorService(settings)


@pytest.fixture
def measure_service(settings):
    return MeasureService(settings)


@pytest.fixture
def simulator(settings):
    return SimulatorService(settings)


@pytest.fixture
def solver(settings):
    return BackwardSolverService(settings)


@pytest.fixture
def comparison(settings):
    return ComparisonService(settings)


@pytest.fixture
def loader(settings):
    return ModelLoaderService(settings)


@pytest.fixture
def exporter(settings):
    return ExporterService(settings)


@pytest.fixture
def models_dir():
    """Directory of the example model files."""
    return MODELS_DIR


@pytest.fixture
def term():
    return term_model()


@pytest.fixture
def endowment():
    return endowment_model()


@pytest.fixture
def cli_env(tmp_path, monkeypatch):
    """Route the command audit log to a temporary file and detach its handlers afterwards."""
    monkeypatch.setenv("THIELEKIT_LOG_FILE", str(tmp_path / "logs" / "cli.log"))
    logger = logging.getLogger("thielekit")

    def detach():
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()

    detach()
    Container.reset()
    yield tmp_path
    detach()
