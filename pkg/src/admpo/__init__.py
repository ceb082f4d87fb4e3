"""Any-step dynamics models and model-based policy optimization on toy control tasks."""
__version__ = "0.1.0"
