"""Delimited output with reproducibility stamps.

Every CSV starts with a `# manifest: <hash>` comment tying it to the run
manifest, then a header row. Formatting is fixed — `.` decimal, LF line
endings, floats via shortest round-trip repr — so identical runs produce
byte-identical files on any platform.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if np.isnan(v):
            return "absent"
        return repr(v)
    return str(value)


def write_csv(
    path: str | Path,
    header: list[str],
    rows: list[list],
    manifest_hash: str | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if manifest_hash:
        lines.append(f"# manifest: {manifest_hash}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]], str | None]:
    """-> (header, string rows, manifest hash if present)."""
    manifest = None
    header: list[str] | None = None
    rows: list[list[str]] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if line.startswith("# manifest:"):
                manifest = line.split(":", 1)[1].strip()
            continue
        if header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    if header is None:
        raise ValueError(f"{path}: no header row")
    return header, rows, manifest
