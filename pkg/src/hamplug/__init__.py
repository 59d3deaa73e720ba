"""Hamiltonian plug: a doubled Reeb-orbit trap, its flow and its verification suites."""

import hashlib
import os
from pathlib import Path

import numba

__version__ = "0.1.0"


def _cache_dir() -> str:
    # Compiled kernels that take other kernels as arguments are cached per
    # argument type, and numba only invalidates on the defining file.  Keying
    # the directory on all package sources keeps stale entries out.
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.read_bytes())
    base = os.environ.get("HAMPLUG_CACHE_DIR") or os.path.join(
        os.environ.get("XDG_CACHE_HOME") or os.path.expanduser("~/.cache"), "hamplug")
    return os.path.join(base, h.hexdigest()[:16])


numba.config.CACHE_DIR = _cache_dir()
