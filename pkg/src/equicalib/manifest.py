"""Run manifests and deterministic delimited output.

Every CLI run writes a manifest JSON recording the command line, seeds,
versions, input digests, wall-clock, and output paths.  Output CSV files
carry a deterministic provenance header (no timestamps), so reruns with
identical manifest-relevant inputs produce identical bytes.  Floats are
written with 17 significant digits, which round-trips 64-bit values.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def format_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    elapsed: float | None = None

    def record_input(self, path: str | Path):
        self.inputs[str(path)] = sha256_file(path)

    def record_output(self, path: str | Path):
        self.outputs[str(path)] = sha256_file(path)

    def header_lines(self, extra: dict | None = None) -> list[str]:
        """Deterministic provenance header for delimited outputs."""
        fields = {"tool": f"equicalib {__version__}", "command": self.command}
        if self.seed is not None:
            fields["seed"] = self.seed
        for path, digest in sorted(self.inputs.items()):
            fields[f"input {Path(path).name}"] = digest
        if extra:
            fields.update(extra)
        return [f"# {key}: {format_value(v)}" for key, v in fields.items()]

    def finish(self) -> "RunManifest":
        self.elapsed = time.time() - self.started
        return self

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        body = {"tool": "equicalib", "version": __version__,
                "command": self.command, "argv": self.argv, "seed": self.seed,
                "inputs": self.inputs, "outputs": self.outputs,
                "started": self.started, "elapsed": self.elapsed}
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def write_csv(path: str | Path, columns: list[str], rows,
              manifest: RunManifest | None = None,
              extra_header: dict | None = None) -> Path:
    """Write rows (dicts) as CSV with a '# key: value' provenance header."""
    path = Path(path)
    lines = manifest.header_lines(extra_header) if manifest is not None else []
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format_value(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if manifest is not None:
        manifest.record_output(path)
    return path


def write_jsonl(path: str | Path, records, manifest: RunManifest | None = None) -> Path:
    path = Path(path)
    lines = []
    if manifest is not None:
        header = {"schema": "equicalib-report", "tool": f"equicalib {__version__}",
                  "command": manifest.command}
        if manifest.seed is not None:
            header["seed"] = manifest.seed
        if manifest.inputs:
            header["inputs"] = dict(sorted(manifest.inputs.items()))
        lines.append(json.dumps(header, sort_keys=True))
    lines.extend(json.dumps(rec, sort_keys=True) for rec in records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if manifest is not None:
        manifest.record_output(path)
    return path
