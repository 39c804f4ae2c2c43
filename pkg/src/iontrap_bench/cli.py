"""Top-level command line interface: iontrap-bench {chain|compile|simulate|experiment|fit}."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import chain as chain_mod
from . import compiler as comp
from . import engine as eng
from . import experiments as exp
from .chain import CA40, TrapConfig
from .config import (build_addressing, build_machine, build_noise, build_trap,
                     config_digest, load_config)
from .errors import IonTrapBenchError
from .fitting import (Dataset, fit_decay, fit_fringe, fit_gaussian,
                      fit_linear, fit_power_law)
from .results import RunManifest, write_points_csv, write_results, write_shot_records


def _common(parser):
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--threads", type=int, default=1, help="shot worker threads")
    parser.add_argument("--out", default=None, help="output file or directory")


def _build_parser():
    p = argparse.ArgumentParser(prog="iontrap-bench",
                                description="Trapped-ion pulse-level simulation bench")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("chain", help="equilibrium positions and normal modes")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--fax", type=float, default=1.0e6, help="axial COM frequency, Hz")
    c.add_argument("--frad", type=float, default=3.0e6, help="radial COM frequency, Hz")
    _common(c)

    k = sub.add_parser("compile", help="compile a circuit file to a pulse schedule")
    k.add_argument("--circuit", required=True)
    k.add_argument("--machine", default=None, help="config file for machine keys")
    _common(k)

    s = sub.add_parser("simulate", help="run a circuit through the noisy engine")
    s.add_argument("--circuit", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--shots", type=int, default=100)
    _common(s)

    e = sub.add_parser("experiment", help="run a characterization experiment")
    e.add_argument("kind", choices=exp.EXPERIMENT_KINDS)
    e.add_argument("--config", default=None, help="machine/trap/addressing config")
    e.add_argument("--noise", default=None, help="noise config overlay")
    e.add_argument("--shots", type=int, default=None, help="override experiment.shots")
    e.add_argument("--qubit-kind", choices=("ground", "optical"), default="ground")
    e.add_argument("--bus", choices=("axial", "radial"), default="axial")
    e.add_argument("--ghz-n", type=int, default=4)
    e.add_argument("--nbar", type=float, default=0.02)
    _common(e)

    f = sub.add_parser("fit", help="fit a points.csv dataset")
    f.add_argument("--model", required=True,
                   choices=("decay_exp", "rb", "gate", "gaussian", "fringe",
                            "power_law", "linear"))
    f.add_argument("--data", required=True, help="CSV with x,y,yerr[,shots]")
    f.add_argument("--frequency", type=float, default=1.0, help="fringe fixed frequency")
    _common(f)
    return p


def _load_merged_config(*paths):
    cfg = load_config(None)
    for path in paths:
        if path:
            overlay = load_config(path)
            # load_config fills defaults; apply only keys present in the file
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
            for line in text.splitlines():
                line = line.split("#", 1)[0].strip()
                if line and "=" in line:
                    key = line.split("=", 1)[0].strip()
                    cfg[key] = overlay[key]
    return cfg


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def cmd_chain(args) -> int:
    trap = TrapConfig(omega_ax=2 * math.pi * args.fax, omega_rad=2 * math.pi * args.frad)
    chain = chain_mod.equilibrium_positions(args.n, CA40, trap)
    lines = ["ion_index,position_um"]
    lines += [f"{i},{_fmt(z)}" for i, z in enumerate(chain.positions)]
    lines.append("mode_index,freq_hz,direction")
    ax = chain_mod.axial_mode_spectrum(chain)
    for i, w in enumerate(ax.frequencies):
        lines.append(f"{i},{_fmt(w / (2 * math.pi))},axial")
    rad = chain_mod.radial_mode_spectrum(chain)
    for i, w in enumerate(rad.frequencies):
        lines.append(f"{i},{_fmt(w / (2 * math.pi))},radial")
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_compile(args) -> int:
    cfg = _load_merged_config(args.machine)
    machine = build_machine(cfg)
    with open(args.circuit, encoding="utf-8") as fh:
        circuit = comp.parse_circuit(fh.read())
    schedule = comp.compile_circuit(circuit, machine)
    text = schedule.to_json() + "\n"
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_merged_config(args.config)
    machine = build_machine(cfg)
    noise = build_noise(cfg)
    with open(args.circuit, encoding="utf-8") as fh:
        circuit = comp.parse_circuit(fh.read())
    schedule = comp.compile_circuit(circuit, machine)
    records = eng.run_schedule(schedule, machine, noise, args.shots,
                               seed=args.seed, threads=args.threads)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    write_shot_records(os.path.join(out, "shots.csv"), records)
    n = machine.n_qubits
    valid = [r for r in records if r.valid]
    pops = []
    for q in range(n):
        k = sum(r.bits[q] for r in valid)
        m = len(valid)
        pops.append({"qubit": q, "p_bright": k / m,
                     "stderr": float(np.sqrt(max(k, 0.5) * (m - min(k, m - 0.5)) / m**3))})
    summary = {
        "shots": args.shots,
        "valid_shots": len(valid),
        "populations": pops,
        "provenance": {"seed": args.seed, "config_digest": config_digest(cfg)},
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    manifest = RunManifest(args.seed, cfg, inputs=(args.circuit,),
                           outputs=("shots.csv", "summary.json"))
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_merged_config(args.config, args.noise)
    machine = build_machine(cfg)
    noise = build_noise(cfg)
    unit = build_addressing(cfg)
    shots = args.shots if args.shots is not None else cfg["experiment.shots"]
    spec = exp.ExperimentSpec(args.kind, machine=machine, noise=noise,
                              addressing=unit, shots=shots, seed=args.seed)

    if args.kind == "ramsey":
        t2 = noise.t2(args.qubit_kind)
        waits = np.linspace(0.1 * t2, 2.2 * t2, 8)
        result = exp.run_ramsey(spec, args.qubit_kind, waits)
    elif args.kind == "gradient":
        result = exp.run_gradient_scan(spec, np.linspace(-40.0, 40.0, 9))
    elif args.kind == "rb":
        result = exp.run_rb(spec, [2, 5, 10, 20, 40, 80])
    elif args.kind == "thermometry":
        result = exp.run_sideband_thermometry(spec, args.nbar)
    elif args.kind == "heating":
        result = exp.run_heating_scan(
            spec, np.linspace(0.2, 2.0, 5),
            [0.7e6, 1.05e6, 1.6e6, 2.4e6, 3.2e6], nbar0=args.nbar)
    elif args.kind == "ghz":
        phases = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
        result = exp.run_ghz(spec, args.ghz_n, phases)
    elif args.kind == "gate_decay":
        result = exp.run_gate_decay(spec, [1, 3, 5, 7, 9, 11, 13], bus=args.bus)
    else:  # addressing_scan
        tones = [1.0, 2.0, 3.0, 4.0, 5.0] if unit.kind == "aod" else None
        result = exp.run_addressing_scan(spec, unit, calibration_tones_mhz=tones)

    out = args.out or "."
    extra = {k: v for k, v in result.extra.items()
             if isinstance(v, (int, float, bool, str, list))}
    manifest = RunManifest(args.seed, cfg,
                           inputs=tuple(p for p in (args.config, args.noise) if p))
    write_results(out, result.datasets, result.fits, manifest, extra=extra)
    return 0


_FIT_DISPATCH = {
    "decay_exp": lambda ds, args: fit_decay(ds, form="exp"),
    "rb": lambda ds, args: fit_decay(ds, form="power", fixed_offset=0.5),
    "gate": lambda ds, args: fit_decay(ds, form="power", fixed_offset=0.25),
    "gaussian": lambda ds, args: fit_gaussian(ds),
    "fringe": lambda ds, args: fit_fringe(ds, frequency=args.frequency),
    "power_law": lambda ds, args: fit_power_law(ds),
    "linear": lambda ds, args: fit_linear(ds),
}


def cmd_fit(args) -> int:
    rows = np.genfromtxt(args.data, delimiter=",", names=True)
    ds = Dataset(np.atleast_1d(rows["x"]), np.atleast_1d(rows["y"]),
                 np.atleast_1d(rows["yerr"]))
    fit = _FIT_DISPATCH[args.model](ds, args)
    text = json.dumps({"fit": fit.as_dict()}, indent=1, sort_keys=True) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "chain": cmd_chain,
        "compile": cmd_compile,
        "simulate": cmd_simulate,
        "experiment": cmd_experiment,
        "fit": cmd_fit,
    }[args.command]
    try:
        return handler(args)
    except (IonTrapBenchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
