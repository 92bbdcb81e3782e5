# app/__init__.py
from .main_app import ExperimentApp

__all__ = ['ExperimentApp']
