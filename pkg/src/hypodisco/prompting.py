"""Loading and rendering of the bundled jinja2 prompt templates."""

from __future__ import annotations

from functools import lru_cache
from typing import Any

import jinja2


@lru_cache(maxsize=1)
def _environment() -> jinja2.Environment:
    return jinja2.Environment(
        loader=jinja2.PackageLoader("hypodisco", "templates"),
        undefined=jinja2.StrictUndefined,
        autoescape=False,
        keep_trailing_newline=False,
        trim_blocks=True,
        lstrip_blocks=True,
    )


def render(name: str, **context: Any) -> str:
    """Render ``templates/<name>.j2``."""
    return _environment().get_template(f"{name}.j2").render(**context)


def template_source(name: str) -> str:
    env = _environment()
    return env.loader.get_source(env, f"{name}.j2")[0]
