"""Deterministic result serialization: points.csv, summary.json, manifest.json.

Outputs are byte-identical across runs with equal inputs and seed: LF line
endings, '.' decimal separator, 17-significant-digit floats, sorted JSON
keys, and no wall-clock timestamps in the manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from . import __version__
from .config import config_digest
from .fitting import Dataset, FitResult


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


@dataclass(frozen=True)
class RunManifest:
    seed: int
    config: dict
    inputs: tuple = ()
    outputs: tuple = ()
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_digest": config_digest(self.config),
            "tool_version": self.version,
            "inputs": sorted(self.inputs),
            "outputs": sorted(self.outputs),
        }


def write_points_csv(path: str, dataset: Dataset, shots=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,yerr,shots\n")
        for i in range(len(dataset.x)):
            s = shots[i] if shots is not None else dataset.meta.get("shots", 0)
            fh.write(f"{_fmt(float(dataset.x[i]))},{_fmt(float(dataset.y[i]))},"
                     f"{_fmt(float(dataset.yerr[i]))},{int(s)}\n")


def _json_dump(path: str, obj: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_results(out_dir: str, datasets: dict, fits: dict,
                  manifest: RunManifest, extra: dict = None) -> list:
    """Write all artifacts; returns the list of files written.

    datasets: name -> Dataset ('points' becomes points.csv, others
    <name>.csv).  fits: name -> FitResult, serialized into summary.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, ds in datasets.items():
        fname = "points.csv" if name == "points" else f"{name}.csv"
        path = os.path.join(out_dir, fname)
        write_points_csv(path, ds, shots=ds.meta.get("shots_per_point"))
        written.append(fname)
    summary = {
        "fits": {name: fr.as_dict() for name, fr in fits.items()},
        "provenance": {
            "seed": manifest.seed,
            "config_digest": config_digest(manifest.config),
        },
    }
    if extra:
        summary.update(extra)
    _json_dump(os.path.join(out_dir, "summary.json"), summary)
    written.append("summary.json")
    manifest = RunManifest(manifest.seed, manifest.config, manifest.inputs,
                           tuple(written), manifest.version)
    _json_dump(os.path.join(out_dir, "manifest.json"), manifest.to_dict())
    written.append("manifest.json")
    return written


def write_shot_records(path: str, records):
    """CSV export of dynamics-engine shot records:
    shot,bits,counts_q0..counts_qN,valid"""
    if not records:
        raise ValueError("no records to write")
    n = len(records[0].bits)
    header = "shot,bits," + ",".join(f"counts_q{q}" for q in range(n)) + ",valid\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        for r in records:
            bits = "".join(str(b) for b in r.bits)
            counts = ",".join(str(c) for c in r.counts)
            fh.write(f"{r.shot},{bits},{counts},{int(r.valid)}\n")
