"""Identity check registry and table rendering.

Loads enabled checks from config/identities.yml, runs them and renders
the pass/fail table with a jinja2 template.
"""

from __future__ import annotations

import importlib
import logging
from pathlib import Path

import yaml
from jinja2 import Environment, FileSystemLoader

from loctime.checks.base import IdentityCheck
from loctime.models import CheckResult

logger = logging.getLogger(__name__)

_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "identities.yml"
_TEMPLATES_DIR = Path(__file__).resolve().parent.parent / "templates"


def _load_identities_config() -> dict:
    """Load the identity check configuration from YAML."""
    with open(_CONFIG_PATH, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def _get_check_class(module_path: str) -> type[IdentityCheck]:
    """Import a check module and return the IdentityCheck subclass it defines.

    Raises:
        ImportError: If the module cannot be imported.
        ValueError: If no IdentityCheck subclass is found.
    """
    module = importlib.import_module(module_path)
    for attr_name in dir(module):
        attr = getattr(module, attr_name)
        if (
            isinstance(attr, type)
            and issubclass(attr, IdentityCheck)
            and attr is not IdentityCheck
        ):
            return attr
    raise ValueError(f"No IdentityCheck subclass found in {module_path}")


def get_enabled_checks(config: dict | None = None) -> list[tuple[str, IdentityCheck, dict]]:
    """Load all enabled identity checks.

    Returns:
        A list of (check_id, check_instance, check_config) tuples.
    """
    config = config if config is not None else _load_identities_config()
    checks = []
    for check_id, check_cfg in config.get("checks", {}).items():
        if not check_cfg.get("enabled", False):
            logger.info("Skipping disabled check: %s", check_id)
            continue
        check_cls = _get_check_class(check_cfg["module"])
        checks.append((check_id, check_cls(), check_cfg))
        logger.debug("Loaded check: %s (%s)", check_id, check_cls.__name__)
    return checks


def run_identities(config: dict | None = None) -> list[tuple[str, list[CheckResult]]]:
    """Run every enabled check, grouped by check name."""
    groups = []
    for check_id, check, check_cfg in get_enabled_checks(config):
        logger.info("Running %s ...", check_id)
        groups.append((check.check_name or check_id, check.run(check_cfg)))
    return groups


def render_table(groups: list[tuple[str, list[CheckResult]]]) -> str:
    """Plain-text pass/fail table."""
    env = Environment(
        loader=FileSystemLoader(str(_TEMPLATES_DIR)),
        autoescape=False,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    template = env.get_template("identities.txt.j2")
    n_failed = sum(not r.passed for _, results in groups for r in results)
    return template.render(groups=groups, n_failed=n_failed)
