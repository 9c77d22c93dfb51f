#!/usr/bin/env python3
"""Download the Boston housing and UCI concrete tables into data/.

Both come from published Python wheels (fetched with pip, no install):
Boston from scikit-learn 1.1.3, concrete from rdatasets 0.2.10.
Outputs are plain CSV with a header row and the target in the last column.
"""

import argparse
import csv
import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile

SKLEARN = "scikit-learn==1.1.3"
RDATASETS = "rdatasets==0.2.10"


def pip_download(spec, dest):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
         "--python-version", "3.10", "-d", str(dest), spec],
        check=True,
    )
    wheels = sorted(dest.glob("*.whl"))
    if not wheels:
        sys.exit(f"no wheel downloaded for {spec}")
    return wheels[-1]


def boston(out, tmp):
    wheel = pip_download(SKLEARN, tmp / "sklearn")
    with zipfile.ZipFile(wheel) as z:
        text = z.read("sklearn/datasets/data/boston_house_prices.csv").decode()
    lines = text.splitlines()
    # the first line is "506,13,..." metadata, the second the header
    rows = list(csv.reader(lines[1:]))
    with open(out, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(r for r in rows if r)
    return len(rows) - 1


def concrete(out, tmp):
    import pandas as pd

    wheel = pip_download(RDATASETS, tmp / "rdatasets")
    with zipfile.ZipFile(wheel) as z:
        blob = z.read("rdatasets/_data/modeldata/concrete.pkl.compress")
    frame = None
    for compression in ("gzip", "bz2", "xz", "zip", None):
        try:
            frame = pd.read_pickle(io.BytesIO(blob), compression=compression)
            break
        except Exception:
            continue
    if frame is None:
        sys.exit("could not decode the concrete table")
    frame = frame.drop(columns=[c for c in frame.columns if c == "rownames"])
    frame.to_csv(out, index=False, lineterminator="\n")
    return len(frame)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=pathlib.Path(__file__).resolve().parent.parent / "data", type=pathlib.Path)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as t:
        tmp = pathlib.Path(t)
        n = boston(args.out / "boston.csv", tmp)
        print(f"boston.csv: {n} rows")
        n = concrete(args.out / "concrete.csv", tmp)
        print(f"concrete.csv: {n} rows")


if __name__ == "__main__":
    main()
