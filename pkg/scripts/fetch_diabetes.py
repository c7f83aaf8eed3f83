"""Fetch the Pima Indians Diabetes table and write it as data/diabetes.csv.

The raw table ships inside the ``keel-ds`` wheel on PyPI in its original
row order. The wheel is downloaded with pip into a temporary directory and
only the one member file is read; nothing is installed.

    python3 scripts/fetch_diabetes.py [--out data/diabetes.csv]
"""

from __future__ import annotations

import argparse
import csv
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL_SPEC = "keel-ds==0.2.5"
MEMBER = "keel_ds/data/imbalanced/raw/pima.dat"
COLUMNS = ["Pregnancies", "Glucose", "BloodPressure", "SkinThickness", "Insulin",
           "BMI", "DiabetesPedigreeFunction", "Age", "Outcome"]
LABELS = {"negative": 0, "positive": 1, "tested_negative": 0, "tested_positive": 1}


def convert(raw: str) -> list[list[str]]:
    rows = []
    for lineno, line in enumerate(raw.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != len(COLUMNS):
            raise ValueError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(parts)}")
        try:
            parts[-1] = str(LABELS[parts[-1]])
        except KeyError:
            raise ValueError(f"line {lineno}: unknown label {parts[-1]!r}") from None
        rows.append(parts)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "diabetes.csv")
    args = ap.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary", ":all:",
                        "-d", tmp, WHEEL_SPEC], check=True)
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            raw = zf.read(MEMBER).decode("utf-8")
    rows = convert(raw)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
