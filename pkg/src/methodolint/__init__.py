"""methodolint: an LLM-backed methodology linter for scientific Python code.

Detection knowledge lives in data (pattern bundles: a detection question plus
positive/negative test files); a chat-completions endpoint executes the
questions at scan time. Quality gates keep the bundle corpus honest, and the
eval harness measures the whole pipeline against planted-bug ground truth.
"""

__version__ = "0.1.0"

from .client import EndpointConfig, InferenceError, ModelVerdict
from .evals import EvalMetrics, compute_prf, conservative_precision
from .gates import gate_all, run_deterministic_gates, run_diversity_gate
from .prompts import PromptBundle, TokenBudget, build_prompt, check_budget
from .registry import Pattern, PatternRegistry, load_registry
from .scan import Finding, ScanReport, render_report, scan

__all__ = [
    "__version__",
    "EndpointConfig", "InferenceError", "ModelVerdict",
    "EvalMetrics", "compute_prf", "conservative_precision",
    "gate_all", "run_deterministic_gates", "run_diversity_gate",
    "PromptBundle", "TokenBudget", "build_prompt", "check_budget",
    "Pattern", "PatternRegistry", "load_registry",
    "Finding", "ScanReport", "render_report", "scan",
]
