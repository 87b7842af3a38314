"""Selective prediction for early-exit classifiers."""

from .data import Dataset, gen_mixture, load_csv, save_csv, shift
from .gating import Decision, GoldOracle, Thresholds, baseline_sr, evaluate, gate_step, infer
from .kernels import BACKEND
from .model import LayerReadout, MultiExitModel
from .theory import BoundSpec, lemma_bound, simulate_pipeline, theorem_bound, verify_model_bound

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BoundSpec",
    "Dataset",
    "Decision",
    "GoldOracle",
    "LayerReadout",
    "MultiExitModel",
    "Thresholds",
    "baseline_sr",
    "evaluate",
    "gate_step",
    "gen_mixture",
    "infer",
    "lemma_bound",
    "load_csv",
    "save_csv",
    "shift",
    "simulate_pipeline",
    "theorem_bound",
    "verify_model_bound",
]
