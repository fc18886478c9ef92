"""Project context — resolved paths for the engine and the active project directory.

Single ``init(project_dir)`` call at startup.  All modules import path
accessors from here instead of computing paths at import time.
"""

from pathlib import Path

import yaml

# Engine install location (immutable)
ENGINE_ROOT: Path = Path(__file__).resolve().parent.parent

# Set once via init()
_project_dir: Path | None = None


def init(project_dir: str | Path | None = None) -> None:
    """Set the active project directory.

    When *project_dir* is ``None`` the engine root is used.
    """
    global _project_dir
    if project_dir is None:
        _project_dir = ENGINE_ROOT
    else:
        _project_dir = Path(project_dir).resolve()


def _ensure_init() -> Path:
    """Return the resolved project dir, auto-initializing to ENGINE_ROOT if needed."""
    global _project_dir
    if _project_dir is None:
        _project_dir = ENGINE_ROOT
    return _project_dir


# ── Path accessors ───────────────────────────────────────────────────────────

def get_state_dir() -> Path:
    """Return ``<project_dir>/state``."""
    return _ensure_init() / "state"


def get_results_dir() -> Path:
    """Return ``<project_dir>/state/results``, where traces land by default."""
    return get_state_dir() / "results"


def get_config_path() -> Path:
    """Return ``<project_dir>/config.yml``, falling back to the engine default."""
    project = _ensure_init()
    local = project / "config.yml"
    if local.exists():
        return local
    return ENGINE_ROOT / "config.yml"


def load_defaults(config_path: str | Path | None = None) -> dict:
    """Read the ``experiment`` defaults section of config.yml (empty if absent)."""
    if config_path is None:
        config_path = get_config_path()
    path = Path(config_path)
    if not path.exists():
        return {}
    with open(path) as f:
        config = yaml.safe_load(f) or {}
    return dict(config.get("experiment", {}))
