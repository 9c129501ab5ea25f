"""Loader for versioned prompt template files shipped with the package."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_prompt_template(name: str) -> str:
    """Read a template from the packaged prompts/ directory.

    Templates are data files (named with a version suffix) so experiment
    runs can pin and diff the exact prompt text.
    """
    return resources.files("iterchat").joinpath("prompts").joinpath(name).read_text(encoding="utf-8")
