"""Run-directory files: draw CSVs, pointwise log-likelihood, reports, manifests.

Every file is written to a temporary sibling and renamed into place, so an
interrupted run never leaves a truncated file behind.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .inference import ChainOutput

_UMASK = os.umask(0)
os.umask(_UMASK)


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        os.fchmod(fd, 0o666 & ~_UMASK)
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def draws_csv(chain: ChainOutput) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(chain.names)
    for row in chain.draws:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_chain(chain: ChainOutput, run_dir) -> Path:
    path = Path(run_dir) / f"chain_{chain.chain_index + 1}.csv"
    atomic_write_text(path, draws_csv(chain))
    return path


def read_draws_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(x) for x in r] for r in reader]
    return names, np.array(rows, dtype=float).reshape(-1, len(names))


def write_loglik(chains: list[ChainOutput], area_ids, dates, run_dir) -> None:
    """``loglik.npy`` (draws of all chains stacked, chain order) plus ``loglik_cells.csv`` naming each column."""
    ll = np.vstack([c.pointwise_loglik for c in chains])
    buf = io.BytesIO()
    np.save(buf, ll, allow_pickle=False)
    atomic_write_bytes(Path(run_dir) / "loglik.npy", buf.getvalue())
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["column", "area", "day", "date"])
    c0 = chains[0]
    for k, (a, d) in enumerate(zip(c0.cell_area, c0.cell_day)):
        w.writerow([k, area_ids[a], int(d), str(dates[d])])
    atomic_write_text(Path(run_dir) / "loglik_cells.csv", out.getvalue())


def read_loglik(run_dir) -> np.ndarray:
    return np.load(Path(run_dir) / "loglik.npy", allow_pickle=False)
