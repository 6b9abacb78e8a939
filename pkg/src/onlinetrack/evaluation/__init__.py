"""Synthetic sequences, sequence I/O, metrics and ablations."""
from .metrics import THRESHOLDS, precision_at, success_auc, success_curve, summarize
from .sequence_io import SequenceError, load_sequence, read_results, save_sequence, write_results
from .synth import PRESETS, Sequence, SynthSpec, gen_synthetic

__all__ = ["THRESHOLDS", "precision_at", "success_auc", "success_curve", "summarize", "SequenceError",
           "load_sequence", "read_results", "save_sequence", "write_results", "PRESETS", "Sequence",
           "SynthSpec", "gen_synthetic", "run_ablation"]


def run_ablation(*args, **kwargs):
    from .ablation import run_ablation as _run

    return _run(*args, **kwargs)
