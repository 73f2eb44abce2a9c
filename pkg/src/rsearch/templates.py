"""Embedded system templates for rollout."""

from pathlib import Path

SYSTEM_TEMPLATE = (
    "You are a helpful assistant that can solve the given question step by step. "
    "For each step, start by explaining your thought process. "
    "If additional information is needed, provide a specific query enclosed in <search> and </search>. "
    "The system will return the top search results within <observation> and </observation>. "
    "You can perform multiple searches as needed.\n"
    "When you know the final answer, use <original_evidence> and </original_evidence> to provide all "
    "potentially relevant original information from the observations. "
    "Ensure the information is complete and preserves the original wording without modification. "
    "If no searches were conducted or observations were made, omit the evidence section. "
    "Finally, provide the final answer within <answer> and </answer> tags."
)

# Same instructions with the evidence step removed, for the no-evidence ablation.
SYSTEM_TEMPLATE_NO_EVIDENCE = (
    "You are a helpful assistant that can solve the given question step by step. "
    "For each step, start by explaining your thought process. "
    "If additional information is needed, provide a specific query enclosed in <search> and </search>. "
    "The system will return the top search results within <observation> and </observation>. "
    "You can perform multiple searches as needed.\n"
    "Finally, provide the final answer within <answer> and </answer> tags."
)

BUILTIN_TEMPLATES = {
    "default": SYSTEM_TEMPLATE,
    "no_evidence": SYSTEM_TEMPLATE_NO_EVIDENCE,
}


def resolve_template(name_or_path: str) -> str:
    """Return a built-in template by name, or read one from a file path."""
    if name_or_path in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[name_or_path]
    path = Path(name_or_path)
    if not path.is_file():
        raise ValueError(f"unknown system template {name_or_path!r} (not a built-in name or a file)")
    return path.read_text(encoding="utf-8")
