# ThieleKit - Multi-State Insurance Engine
__version__ = "1.0.0"
