"""
versions.py - Version information from versions.yml and the installed environment
"""

import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from subnet_bne import __version__
from subnet_bne.errors import ConfigError

VERSIONS_FILE = Path(__file__).resolve().parent.parent / "versions.yml"
REPORTED_PACKAGES = ("numpy", "scipy", "networkx", "PyYAML", "rich")


def load_versions_file(path: Path = VERSIONS_FILE) -> Dict[str, Any]:
    """Parse versions.yml; an absent file (installed wheel) yields an empty mapping"""
    if not path.exists():
        return {}
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"error parsing versions file: {exc}") from exc


def installed_version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "not installed"


def runtime_versions() -> Dict[str, str]:
    """Interpreter, simulator and package versions embedded in run summaries"""
    report = {"python": platform.python_version(), "subnet_bne": __version__}
    report.update({name: installed_version(name) for name in REPORTED_PACKAGES})
    return report


def version_rows(versions: Optional[Dict[str, Any]] = None):
    """(key, pinned, installed) rows for the versions table"""
    versions = load_versions_file() if versions is None else versions
    rows = [("python", str(versions.get("python", "-")), platform.python_version())]
    for name, pinned in (versions.get("packages") or {}).items():
        rows.append((f"packages.{name}", str(pinned), installed_version(name)))
    for name, pinned in (versions.get("tools") or {}).items():
        rows.append((f"tools.{name}", str(pinned), installed_version(name)))
    return rows
