"""Fetch MovieLens-100k and write ``data/ml-100k/u.data``.

Tries the GroupLens archive first. Without access to it, the same 100000
ratings are taken from the copy bundled in the ``pytorch-widedeep`` wheel
on PyPI (needs ``pip`` and ``pyarrow``). Either way the result is checked
against the canonical file's SHA-256.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL = "pytorch-widedeep==1.7.0"
WHEEL_MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"
SHA256 = "06416e597f82b7342361e41163890c81036900f418ad91315590814211dca490"


def from_grouplens(timeout: float) -> bytes:
    with urllib.request.urlopen(GROUPLENS, timeout=timeout) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_wheel() -> bytes:
    import pyarrow.parquet as pq

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet", WHEEL, "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            table = pq.read_table(io.BytesIO(zf.read(WHEEL_MEMBER)))
    cols = [table.column(c).to_pylist() for c in ("user_id", "movie_id", "rating", "timestamp")]
    return "".join(f"{u}\t{i}\t{r}\t{t}\n" for u, i, r, t in zip(*cols)).encode()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/ml-100k/u.data")
    ap.add_argument("--timeout", type=float, default=20.0)
    args = ap.parse_args(argv)
    try:
        raw = from_grouplens(args.timeout)
        source = GROUPLENS
    except OSError as e:
        print(f"GroupLens unavailable ({e}); using the {WHEEL} copy", file=sys.stderr)
        raw = from_wheel()
        source = WHEEL
    digest = hashlib.sha256(raw).hexdigest()
    if digest != SHA256:
        print(f"checksum mismatch: got {digest}, expected {SHA256}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(raw)
    lines = raw.count(b"\n")
    print(f"wrote {out} ({lines} lines) from {source}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
