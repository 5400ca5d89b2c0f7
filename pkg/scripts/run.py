#!/usr/bin/env python3

"""
run.py - CLI runner that ensures the virtual environment is used
Runs `python -m subnet_bne <args>` with the .venv interpreter from the project root.
"""

import os
import subprocess
import sys
from pathlib import Path


def get_project_root() -> Path:
    """Get the project root directory"""
    return Path(__file__).parent.parent


def get_venv_python() -> Path:
    """Get the path to the virtual environment Python executable"""
    venv_dir = get_project_root() / ".venv"
    if os.name == "nt":  # Windows
        return venv_dir / "Scripts" / "python.exe"
    return venv_dir / "bin" / "python"


def ensure_venv_setup() -> Path:
    venv_python = get_venv_python()
    if not venv_python.exists():
        print("❌ Python virtual environment not found!")
        print("Please set it up first by running:")
        print("  task setup")
        sys.exit(1)
    return venv_python


def run_cli(args: list) -> int:
    """Run the subnet_bne CLI with the virtual environment interpreter"""
    cmd = [str(ensure_venv_setup()), "-m", "subnet_bne", *args]
    try:
        return subprocess.run(cmd, cwd=get_project_root()).returncode
    except KeyboardInterrupt:
        print("\n🛑 Interrupted by user")
        return 130
    except OSError as e:
        print(f"❌ Error running subnet_bne: {e}")
        return 1


def main():
    if len(sys.argv) < 2:
        print("Usage: python scripts/run.py <command> [args...]")
        print("Example: python scripts/run.py run configs/rent_seeking.yml")
        return 1
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
