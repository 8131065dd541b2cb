"""Small CSV helpers shared by the writers in this package."""

import csv
from pathlib import Path


def fmt(value) -> str:
    """Floats with 17 significant digits (round-trip exact); everything else via str."""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_rows(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(expected_header):
            raise ValueError(
                f"{path}: expected header {','.join(expected_header)}, got {header}"
            )
        return [row for row in reader if row]
