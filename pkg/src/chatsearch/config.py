"""Default knobs for the pipeline and per-role chat sampling parameters.

Defaults: 10 clusters per round, candidate set of about 1% of the pool,
and role-specific sampling (question generation 0.7/32, reformulation
0.0/512, answerability filtering 0.0/10). Environment variables of the
form CHATSEARCH_<ROLE>_TEMPERATURE / CHATSEARCH_<ROLE>_MAX_TOKENS
override the sampling per role.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

DEFAULT_CLUSTERS = 10
DEFAULT_MAX_ROUNDS = 10
DEFAULT_QUESTIONS_PER_ROUND = 5
DEFAULT_REPORT_K = 10
DEFAULT_SOFTMAX_TEMPERATURE = 1.0


@dataclass(frozen=True)
class SamplingParams:
    temperature: float
    max_output_tokens: int


ROLE_SAMPLING: dict[str, SamplingParams] = {
    "question_generation": SamplingParams(temperature=0.7, max_output_tokens=32),
    "reformulation": SamplingParams(temperature=0.0, max_output_tokens=512),
    "filtering": SamplingParams(temperature=0.0, max_output_tokens=10),
}


def sampling_for(role: str, env=None) -> SamplingParams:
    """Sampling parameters for a chat role, with env-var overrides."""
    if role not in ROLE_SAMPLING:
        raise KeyError(f"unknown chat role {role!r}")
    base = ROLE_SAMPLING[role]
    env = os.environ if env is None else env
    prefix = f"CHATSEARCH_{role.upper()}_"
    temperature = float(env.get(prefix + "TEMPERATURE", base.temperature))
    max_tokens = int(env.get(prefix + "MAX_TOKENS", base.max_output_tokens))
    return SamplingParams(temperature=temperature, max_output_tokens=max_tokens)
