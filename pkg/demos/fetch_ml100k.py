"""Place MovieLens-100k ratings at data/ml-100k/u.data.

The GroupLens host is the canonical source. When it is unreachable the same
100,000 rows are taken from the copy bundled in the RecBole wheel (fetched
with ``pip download``), with its one-line header dropped.

    python3 demos/fetch_ml100k.py [--out data/ml-100k/u.data]
"""
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
WHEEL_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def from_grouplens() -> bytes:
    with urllib.request.urlopen(GROUPLENS, timeout=20) as resp:
        blob = resp.read()
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        return zf.read("ml-100k/u.data")


def from_wheel() -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        "-d", tmp, "recbole==1.2.1"], check=True)
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            lines = zf.read(WHEEL_MEMBER).decode("latin-1").splitlines()
    if not lines[0].startswith("user_id"):
        raise RuntimeError("unexpected header in bundled ml-100k file")
    return ("\n".join(lines[1:]) + "\n").encode("latin-1")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/ml-100k/u.data")
    args = ap.parse_args()
    out = Path(args.out)
    if out.exists():
        print(f"{out} already present")
        return 0
    try:
        blob = from_grouplens()
        source = "grouplens"
    except OSError as exc:
        print(f"grouplens unreachable ({exc}); using the RecBole wheel copy")
        blob = from_wheel()
        source = "recbole wheel"
    rows = blob.decode("latin-1").strip().splitlines()
    if len(rows) != 100_000:
        print(f"expected 100000 ratings, got {len(rows)}", file=sys.stderr)
        return 2
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(blob)
    print(f"wrote {out} from {source}: {len(rows)} rows, sha256 {hashlib.sha256(blob).hexdigest()[:16]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
