"""Prompt templates as editable text assets.

Templates live next to this module as plain .txt files with named
placeholders ({caption}, {dialogue}, {candidate_captions}, {question}).
They are data, not code: point ``template_dir`` at another directory to
swap the whole set without touching the pipeline.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = ("reformulate", "questions_cot", "filter")

EMPTY_DIALOGUE = "(no questions asked yet)"


def load_template(name: str, template_dir: str | Path | None = None) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    if template_dir is not None:
        return (Path(template_dir) / f"{name}.txt").read_text(encoding="utf-8")
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, template_dir: str | Path | None = None, **fields) -> str:
    template = load_template(name, template_dir)
    try:
        return template.format(**fields)
    except KeyError as exc:
        raise KeyError(f"template {name!r} needs placeholder {exc.args[0]!r}") from None


def format_dialogue(qa_pairs) -> str:
    """Q:/A: lines for the {dialogue} placeholder; stable empty form."""
    if not qa_pairs:
        return EMPTY_DIALOGUE
    lines = []
    for question, answer in qa_pairs:
        lines.append(f"Q: {question}")
        lines.append(f"A: {answer}")
    return "\n".join(lines)


def format_candidate_captions(captions) -> str:
    """Numbered lines for the {candidate_captions} placeholder."""
    return "\n".join(f"{i}. {caption}" for i, caption in enumerate(captions, start=1))
