"""Shared fixtures. MovieLens-backed tests run only when a ratings file is
available; everything else is self-contained."""

import os
from pathlib import Path

import pytest


def find_movielens():
    """Locate a MovieLens ratings file: $MOVIELENS_RATINGS first, then the
    conventional data/ drop-in locations under the repo root."""
    env = os.environ.get("MOVIELENS_RATINGS")
    if env and Path(env).exists():
        return Path(env)
    root = Path(__file__).resolve().parent.parent
    for rel in ("data/ml-1m/ratings.dat", "data/ratings.dat", "data/ratings.csv"):
        cand = root / rel
        if cand.exists():
            return cand
    return None


@pytest.fixture(scope="session")
def ml1m_path():
    path = find_movielens()
    if path is None:
        pytest.skip(
            "MovieLens ratings file not available (set MOVIELENS_RATINGS or "
            "place ml-1m/ratings.dat under data/)"
        )
    return path
