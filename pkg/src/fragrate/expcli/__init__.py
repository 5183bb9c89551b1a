"""Experiment orchestration: configuration, runs, rate fits and reports."""

from .config import KINDS, SCHEMA, ExperimentConfig, load_config, parse_config
from .experiments import presence_probability, run, simulate_record
from .fitting import RateFit, fit_rate
from .records import Check, ExperimentRecord, read_record, write_record
from .report import exit_status, report

__all__ = ["KINDS", "SCHEMA", "ExperimentConfig", "load_config", "parse_config", "presence_probability", "run",
           "simulate_record", "RateFit", "fit_rate", "Check", "ExperimentRecord", "read_record", "write_record",
           "exit_status", "report"]
