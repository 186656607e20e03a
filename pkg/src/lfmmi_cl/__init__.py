"""LF-MMI sequence training over finite-state graphs with continual-learning regularizers."""
from .errors import DegenerateGap, InvalidInput, LfmmiClError, NoPath, NumericalError
from .fb import forward_backward, logprob_and_occupancies, viterbi
from .graph import BigramLm, Graph, build_denominator_graph, build_numerator_graph, estimate_bigram_lm
from .harness import PipelineConfig, PipelineData, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BigramLm",
    "DegenerateGap",
    "Graph",
    "InvalidInput",
    "LfmmiClError",
    "NoPath",
    "NumericalError",
    "PipelineConfig",
    "PipelineData",
    "build_denominator_graph",
    "build_numerator_graph",
    "estimate_bigram_lm",
    "forward_backward",
    "logprob_and_occupancies",
    "run_pipeline",
    "viterbi",
]
