"""Task agents, prompt assembly, model backends and the candidate quality checker."""

from .backends import BackendError, HttpBackend, LlmBackend, MockBackend
from .candidate import AlphaCandidate, Status
from .extract import Diagnostic, Extracted, extract_candidates
from .feedback import summarize_feedback
from .operators import crossover, mutate
from .profiles import LEVELS, PROFILE_BY_NAME, PROFILES, AgentProfile
from .prompts import FeedbackSummary, ParaphraseMode, PromptBundle, build_prompt, paraphrase
from .quality import QualityOptions, check, quality_pipeline

__all__ = [
    "AgentProfile",
    "AlphaCandidate",
    "BackendError",
    "Diagnostic",
    "Extracted",
    "FeedbackSummary",
    "HttpBackend",
    "LEVELS",
    "LlmBackend",
    "MockBackend",
    "PROFILES",
    "PROFILE_BY_NAME",
    "ParaphraseMode",
    "PromptBundle",
    "QualityOptions",
    "Status",
    "build_prompt",
    "check",
    "crossover",
    "extract_candidates",
    "mutate",
    "paraphrase",
    "quality_pipeline",
    "summarize_feedback",
]
