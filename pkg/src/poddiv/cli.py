"""Command-line driver: ``poddiv {fom,pod,rom,verify,report} --config PATH [--out DIR]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import ConvectionForm, FormKind, assemble_matrix
from .config import RunConfig, load_config
from .diagnostics import (body_force_functional, drag_lift, energy_balance_residual, error_series)
from .errors import (ConfigError, ContractError, DegenerateEnsembleError, DimensionError, FormatError,
                     PoddivError, SolverFailure, StepError, StorageError, UnsupportedError)
from .fespace import VELOCITY, FeFunction
from .fom import fom_run
from .io import read_basis, read_snapshots, write_basis, write_csv, write_reduced, write_snapshots, atomic_write
from .pod import build_basis, pod_stiffness, project
from .rom import RomConfig, reduce_operators, rom_run

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _workers() -> int:
    raw = os.environ.get("PODDIV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PODDIV_THREADS must be an integer, got {raw!r}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(cfg: RunConfig, out: Path, stage: str, files: list[Path], extra: dict | None = None):
    """Write ``manifest_<stage>.json`` echoing the resolved config and file checksums."""
    doc = {"tool": "poddiv", "version": __version__, "stage": stage, **cfg.resolved(),
           "artifacts": {p.name if p.parent == out else str(p.relative_to(out)): _sha256(p)
                         for p in sorted(files)}}
    if extra:
        doc["results"] = extra
    atomic_write(out / f"manifest_{stage}.json", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def _outdir(cfg: RunConfig, override) -> Path:
    out = Path(override) if override else cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# fom
# ---------------------------------------------------------------------------

def cmd_fom(cfg: RunConfig, out: Path) -> int:
    space = cfg.space()
    fcfg = cfg.fom_config()
    res = fom_run(fcfg, space)
    files = []
    if fcfg.window is not None:
        write_snapshots(res.snapshots, out / "snapshots.bin")
        files.append(out / "snapshots.bin")
        if res.reference is not None:
            write_snapshots(res.reference, out / "reference.bin")
            files.append(out / "reference.bin")
    s = res.series
    write_csv(out / "fom_series.csv", s.columns())
    files.append(out / "fom_series.csv")
    n = len(s.step)
    write_csv(out / "errors.csv", {
        "step": s.step, "time": s.time, "err_rom_fom": np.full(n, np.nan),
        "err_fom_exact": s.err_l2 if s.err_l2 is not None else np.full(n, np.nan),
        "div_norm": s.div_norm})
    files.append(out / "errors.csv")
    summary = {"steps": int(fcfg.n_steps), "snapshots": len(res.snapshots),
               "final_kinetic_energy": float(s.kinetic_energy[-1])}
    if s.err_l2 is not None:
        summary["max_err_l2"] = float(s.err_l2.max())
    _manifest(cfg, out, "fom", files, summary)
    print(f"fom: {fcfg.n_steps} steps, {len(res.snapshots)} snapshots written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pod
# ---------------------------------------------------------------------------

def cmd_pod(cfg: RunConfig, out: Path, snapshots: Path | None) -> int:
    space = cfg.space()
    path = snapshots or out / "snapshots.bin"
    snaps = read_snapshots(path, space)
    basis = build_basis(snaps, cfg.pod_config())
    write_basis(basis, out / "basis.bin")
    m = len(basis.eigenvalues)
    k = np.arange(1, m + 1)
    write_csv(out / "spectrum.csv", {"k": k, "lambda_k": basis.eigenvalues, "Lambda_k": basis.tails[1:]})
    _, s2 = pod_stiffness(basis)
    summary = {"snapshots": m, "d_v": basis.d_v, "r": basis.r, "centering": basis.centered,
               "stiffness_norm": s2, "Lambda_0": float(basis.tails[0]), "Lambda_r": float(basis.tails[basis.r])}
    _manifest(cfg, out, "pod", [out / "basis.bin", out / "spectrum.csv"], summary)
    print(f"pod: {m} snapshots, d_v = {basis.d_v}, r = {basis.r}, stiffness norm = {s2:.6e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rom
# ---------------------------------------------------------------------------

def _rom_case(cfg: RunConfig, basis_full, reference, form: str, r: int, dt: float, t_end: float,
              out: Path, forces):
    basis = basis_full.truncate(r)
    fcfg = cfg.fom_config(keep_reference=False)
    scheme = cfg.doc["rom"]["scheme"]
    ref = reference.window(reference.t_start, t_end)
    steps = len(ref) - 1
    sys_r = reduce_operators(basis, form, fcfg.forcing)
    rcfg = RomConfig(dt=dt, steps=steps, nu=fcfg.nu, mu=fcfg.mu, t0=ref.t_start, scheme=scheme)
    a0 = project(basis, ref.vectors[0])
    a1 = project(basis, ref.vectors[1]) if (rcfg.scheme.value == "bdf2_semi_implicit" and steps >= 1) else None
    traj = rom_run(sys_r, rcfg, a0, a1)
    window_end = cfg.doc["snapshots"]["window"][1]
    errs = error_series(ref, traj, basis, window_end=window_end)

    case = out / "rom" / f"{form}_r{r:03d}"
    case.mkdir(parents=True, exist_ok=True)
    steps_idx = np.arange(len(traj))
    cols = {"step": steps_idx, "time": traj.times}
    for j in range(basis.r):
        cols[f"a_{j + 1}"] = traj.coeffs[:, j]
    cols["reduced_energy"] = traj.energy
    write_csv(case / "trajectory.csv", cols)
    write_csv(case / "errors.csv", errs.columns())
    resid = np.full(len(traj), np.nan)
    eye = np.eye(basis.r)
    for n in range(1, len(traj)):
        resid[n] = energy_balance_residual(traj.coeffs[n], traj.coeffs[n - 1], eye, sys_r.A, sys_r.G,
                                           sys_r.force(traj.times[n]), fcfg.nu, fcfg.mu, dt).residual
    write_csv(case / "energy.csv", {"step": steps_idx, "time": traj.times, "E": traj.energy,
                                    "balance_residual": resid})
    files = [case / "trajectory.csv", case / "errors.csv", case / "energy.csv"]
    if forces is not None:
        cd, cl = np.full(len(traj), np.nan), np.full(len(traj), np.nan)
        for n in range(1, len(traj)):
            u = FeFunction(basis.space, VELOCITY, basis.offset() + basis.modes @ traj.coeffs[n])
            up = FeFunction(basis.space, VELOCITY, basis.offset() + basis.modes @ traj.coeffs[n - 1])
            cd[n], cl[n] = drag_lift(u, up, None, forces, fcfg.nu, dt, form)
        write_csv(case / "forces.csv", {"step": steps_idx, "time": traj.times, "cd": cd, "cl": cl})
        files.append(case / "forces.csv")
    row = {"form": form, "r": basis.r, "Lambda_r": float(basis_full.tails[basis.r]),
           "err_window_sq": errs.window_sq, "err_full_sq": errs.full_sq}
    return row, files


def cmd_rom(cfg: RunConfig, out: Path, basis_path: Path | None, reference_path: Path | None) -> int:
    if "snapshots" not in cfg.doc:
        raise ConfigError("field snapshots: required for the rom stage")
    space = cfg.space()
    basis = read_basis(basis_path or out / "basis.bin", space)
    ref_path = reference_path or out / "reference.bin"
    reference = read_snapshots(ref_path, space)
    if len(reference) < 2:
        raise ContractError(f"{ref_path}: reference trajectory needs at least two states")
    dt = reference.spacing
    window = cfg.doc["rom"]["window"]
    t_end = cfg.doc["snapshots"]["window"][1] if window == "reconstructive" else float(reference.times[-1])
    ranks = []
    for r in cfg.rom_ranks(basis.d_v):
        if r > basis.d_v:
            print(f"warning: r = {r} exceeds d_v = {basis.d_v}; clamped", file=sys.stderr)
            r = basis.d_v
        if r not in ranks:
            ranks.append(r)
    forces = None
    if "forces" in cfg.doc:
        f = cfg.doc["forces"]
        forces = body_force_functional(space, f["marker"], True, f.get("density", 1.0),
                                       f.get("velocity", 1.0), f.get("diameter", 1.0))
    cases = [(form, r) for form in cfg.doc["rom"]["forms"] for r in ranks]

    def run(case):
        return _rom_case(cfg, basis, reference, case[0], case[1], dt, t_end, out, forces)

    workers = min(_workers(), len(cases))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, cases))
    else:
        results = [run(c) for c in cases]
    rows = [r for r, _ in results]
    files = [f for _, fs in results for f in fs]
    write_csv(out / "sweep.csv", {k: [row[k] for row in rows] for k in rows[0]})
    files.append(out / "sweep.csv")
    basis_full = basis
    for sys_form in cfg.doc["rom"]["forms"]:
        r = ranks[-1]
        write_reduced(reduce_operators(basis_full.truncate(r), sys_form, cfg.forcing()),
                      out / f"reduced_{sys_form}.bin")
        files.append(out / f"reduced_{sys_form}.bin")
    _manifest(cfg, out, "rom", files, {"cases": rows, "window": window})
    for row in rows:
        print(f"rom {row['form']:>4} r={row['r']:3d}  Lambda_r={row['Lambda_r']:.3e}  "
              f"err^2={row['err_window_sq'] if window == 'reconstructive' else row['err_full_sq']:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(cfg: RunConfig, out: Path) -> int:
    """Regenerate plot-ready CSV tables from stored binary artifacts."""
    space = cfg.space()
    files = []
    M = assemble_matrix(FormKind.MASS, space)
    G = assemble_matrix(FormKind.GRADDIV, space)
    snap_path = out / "snapshots.bin"
    if snap_path.exists():
        snaps = read_snapshots(snap_path, space)
        V = snaps.vectors
        write_csv(out / "snapshot_energy.csv", {
            "index": np.arange(len(snaps)), "time": snaps.times,
            "kinetic_energy": 0.5 * np.einsum("ij,ij->i", V, (M @ V.T).T),
            "div_norm": np.sqrt(np.maximum(np.einsum("ij,ij->i", V, (G @ V.T).T), 0))})
        files.append(out / "snapshot_energy.csv")
    basis_path = out / "basis.bin"
    if basis_path.exists():
        basis = read_basis(basis_path, space)
        m = len(basis.eigenvalues)
        write_csv(out / "spectrum.csv", {"k": np.arange(1, m + 1), "lambda_k": basis.eigenvalues,
                                         "Lambda_k": basis.tails[1:]})
        files.append(out / "spectrum.csv")
    if not files:
        raise StorageError(f"no stored artifacts found in {out}")
    _manifest(cfg, out, "report", files)
    print(f"report: regenerated {len(files)} table(s) in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(suite: str) -> int:
    from .verify import SUITES

    checks = SUITES[suite]()
    width = max(len(c.name) for c in checks)
    print(f"{'check':<{width}}  {'measured':>12}  {'limit':>12}  result")
    for c in checks:
        print(f"{c.name:<{width}}  {c.value:>12.3e}  {c.limit:>12.3e}  {'PASS' if c.passed else 'FAIL'}")
    ok = all(c.passed for c in checks)
    print(f"suite {suite}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poddiv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"poddiv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("fom", "pod", "rom", "report"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path)
        if name == "pod":
            s.add_argument("--snapshots", type=Path, help="snapshot file (default OUT/snapshots.bin)")
        if name == "rom":
            s.add_argument("--basis", type=Path, help="basis file (default OUT/basis.bin)")
            s.add_argument("--reference", type=Path, help="reference trajectory (default OUT/reference.bin)")
    v = sub.add_parser("verify")
    v.add_argument("--suite", required=True, choices=["algebra", "pod", "energy", "convergence"])
    v.add_argument("--config", type=Path, help="accepted for symmetry; unused")
    v.add_argument("--out", type=Path, help="accepted for symmetry; unused")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.suite)
        cfg = load_config(args.config)
        out = _outdir(cfg, args.out)
        if args.command == "fom":
            return cmd_fom(cfg, out)
        if args.command == "pod":
            return cmd_pod(cfg, out, args.snapshots)
        if args.command == "rom":
            return cmd_rom(cfg, out, args.basis, args.reference)
        return cmd_report(cfg, out)
    except (ConfigError, ContractError, DimensionError, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SolverFailure, StepError, DegenerateEnsembleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StorageError, FormatError, OSError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except PoddivError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
