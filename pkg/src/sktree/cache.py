"""On-disk cache of branch-kernel blocks keyed by (tree id, tree id, kernel hash)."""
from __future__ import annotations

import os
import sqlite3
from contextlib import closing
from pathlib import Path

import numpy as np

CACHE_ENV = "SKTREE_CACHE_DIR"


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "sktree"))


def _encode(arr: np.ndarray) -> tuple[int, int, bytes]:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return arr.shape[0], arr.shape[1], arr.tobytes()


def _decode(rows: int, cols: int, blob: bytes) -> np.ndarray:
    # raw little-endian float64, far cheaper to read back than .npy headers
    return np.frombuffer(blob, dtype="<f8").reshape(rows, cols)


class BlockCache:
    """SQLite store of kernel blocks.

    SQLite serializes concurrent writers with its own file locking, and every
    ``put_many`` is one transaction, so readers never observe partial blocks.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / "blocks.sqlite"
        with closing(self._connect()) as con, con:
            con.execute("CREATE TABLE IF NOT EXISTS kernel_blocks ("
                        "a TEXT, b TEXT, cfg TEXT, n_rows INTEGER, n_cols INTEGER, data BLOB, "
                        "PRIMARY KEY (a, b, cfg))")

    def _connect(self):
        return sqlite3.connect(self.path, timeout=60)

    def get_many(self, keys) -> dict:
        keys = list(keys)
        if not keys:
            return {}
        out = {}
        wanted = set(keys)
        cfgs = {k[2] for k in keys}
        with closing(self._connect()) as con, con:
            for cfg in cfgs:
                for a, b, c, n_rows, n_cols, data in con.execute(
                        "SELECT a, b, cfg, n_rows, n_cols, data FROM kernel_blocks "
                        "WHERE cfg = ?", (cfg,)):
                    if (a, b, c) in wanted:
                        out[(a, b, c)] = _decode(n_rows, n_cols, data)
                    elif (b, a, c) in wanted and (b, a, c) not in out:
                        out[(b, a, c)] = _decode(n_rows, n_cols, data).T
        return out

    def put_many(self, blocks: dict) -> None:
        rows = [(a, b, c, *_encode(v)) for (a, b, c), v in blocks.items()]
        with closing(self._connect()) as con, con:
            con.executemany("INSERT OR REPLACE INTO kernel_blocks VALUES (?, ?, ?, ?, ?, ?)",
                            rows)

    def __len__(self) -> int:
        with closing(self._connect()) as con:
            return con.execute("SELECT COUNT(*) FROM kernel_blocks").fetchone()[0]
