"""Experiment harness: simulate | solve | observe | rearrange | convergence.

Every run writes its artifacts plus a manifest listing the inputs, the
package version and a sha256 digest per output file; the same config and
seed always reproduce byte-identical files, whatever --threads says (the
thread count only caps batch sizes in embarrassingly parallel loops and is
recorded for provenance).

Exit codes: 0 success, 2 configuration error, 3 numeric guard violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import struct
import sys
from pathlib import Path

import numpy as np

from . import __version__, seeding
from .config import ConfigError, ExperimentConfig, canonical_json
from .metrics import GapReport, independence_gap, meanfield_gap
from .observables import (
    LatticeBudgetError,
    hierarchy,
    hierarchy_norm,
    hierarchy_residual,
    lambda_admissible,
    tau,
)
from .particles import ParticleState, StabilityError, step_deterministic, step_stochastic
from .pde import CFLError, solve
from .rearrange import CellFunctions, build_phi, fit_modulus_constant, modulus, n_pieces, save_permutation
from .trees import enumerate_trees
from .weights import check_scaling

FLOAT_FMT = "{:.17g}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return FLOAT_FMT.format(v)
    s = str(v)
    if "," in s or '"' in s:
        s = '"' + s.replace('"', '""') + '"'
    return s


class Emitter:
    """Deterministic artifact writer with digest collection."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        self.digests: dict[str, str] = {}

    def register_file(self, path: Path):
        self.digests[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write_text(self, name: str, text: str):
        path = self.out_dir / name
        path.write_text(text)
        self.register_file(path)

    def write_csv(self, name: str, header: list[str], rows):
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        self.write_text(name, "\n".join(lines) + "\n")

    def write_json(self, name: str, obj):
        self.write_text(name, canonical_json(obj))

    def write_lattice(self, name: str, order: int, g_cells: int, values: np.ndarray):
        """Binary lattice dump: 16-byte header (magic, version, order, G),
        then float64 values in C order."""
        path = self.out_dir / name
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIII", b"NXMF", 1, order, g_cells))
            fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
        self.register_file(path)

    def write_density_bin(self, name: str, snapshot):
        """Binary density dump: 16-byte header (magic, version, n_fibers, G),
        then float64 values in column-major order."""
        path = self.out_dir / name
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIII", b"NXMF", 1, snapshot.n_fibers,
                                 snapshot.grid.n_cells))
            fh.write(np.asfortranarray(snapshot.values, dtype="<f8").tobytes(order="F"))
        self.register_file(path)

    def manifest(self, cfg: ExperimentConfig, command: str, seed: int, threads: int):
        doc = {
            "command": command,
            "version": __version__,
            "seed": seed,
            "threads": threads,
            "config_sha256": hashlib.sha256(cfg.to_text().encode()).hexdigest(),
            "outputs": dict(sorted(self.digests.items())),
        }
        self.write_text("manifest.json", canonical_json(doc))


def _gap_rows(reports: list[GapReport]):
    return [(r.t, r.gap, r.bound, r.stderr, r.seeds) for r in reports]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, em: Emitter, seed: int):
    w = cfg.build_weights()
    k = cfg.build_kernel()
    laws = cfg.build_laws(w.n_agents)
    t_end = float(cfg.time["t_end"])
    snaps = sorted(float(s) for s in cfg.time.get("snapshots", [t_end]))
    dt = float(cfg.time.get("dt", 0.01))
    rng = seeding.stream(seed, seeding.INIT, 0)
    state = ParticleState(laws.sample(rng), 0.0)

    rows = []

    def record(st):
        for i in range(st.n_agents):
            rows.append((st.time, i + 1) + tuple(st.positions[i]))

    pending = [s for s in snaps]
    if pending and pending[0] <= 0:
        record(state)
        pending.pop(0)
    step_idx = 0
    while state.time < t_end - 1e-12:
        step_dt = min(dt, t_end - state.time)
        if cfg.sigma > 0:
            nrng = seeding.stream(seed, seeding.NOISE, 0, step_idx)
            state = step_stochastic(w, k, state, step_dt, cfg.sigma, nrng)
        else:
            state = step_deterministic(w, k, state, step_dt)
        step_idx += 1
        while pending and state.time >= pending[0] - 1e-12:
            record(state)
            pending.pop(0)
    for _ in pending:
        record(state)

    d = state.dim
    header = ["t", "agent"] + [f"coord{j}" for j in range(d)]
    em.write_csv("trajectory.csv", header, rows)
    rep = check_scaling(w)
    em.write_json("scaling_report.json", {
        "max_row_abs_sum": rep.max_row_abs_sum,
        "max_col_abs_sum": rep.max_col_abs_sum,
        "max_entry_abs": rep.max_entry_abs,
        "density": rep.density,
    })


def _solve_from_config(cfg: ExperimentConfig):
    w = cfg.build_weights()
    k = cfg.build_kernel()
    grid = cfg.build_grid()
    laws = cfg.build_laws(w.n_agents)
    f0 = laws.fibers(grid)
    t_end = float(cfg.time["t_end"])
    snaps = sorted(float(s) for s in cfg.time.get("snapshots", [t_end]))
    dt = cfg.time.get("dt")
    res = solve(f0, w, k, nu=cfg.nu, t_end=t_end, output_times=snaps,
                dt=float(dt) if dt else None)
    return w, k, grid, res


def cmd_solve(cfg: ExperimentConfig, em: Emitter, seed: int):
    w, k, grid, res = _solve_from_config(cfg)
    rows = []
    centers = grid.centers()
    for snap in res.snapshots:
        for fib in range(snap.n_fibers):
            for c in range(grid.n_cells):
                rows.append((snap.time, fib + 1, c, centers[c], snap.values[fib, c]))
    em.write_csv("density.csv", ["t", "fiber", "cell", "x_center", "value"], rows)
    if cfg.raw.get("output", {}).get("binary_density"):
        for i, snap in enumerate(res.snapshots):
            em.write_density_bin(f"density_{i:03d}.bin", snap)
    final = res.final
    em.write_json("conservation.json", {
        "boundary": "torus wrap" if grid.topology == "torus"
                    else "zero inflow with advective leakage ledger (line truncation choice)",
        "n_steps": res.n_steps,
        "max_step_mass_drift": res.max_step_mass_drift,
        "clamp_total": final.clamp_total,
        "initial_mass": final.initial_mass.tolist(),
        "final_mass": final.masses().tolist(),
        "leakage": final.leakage.tolist(),
    })


def cmd_observe(cfg: ExperimentConfig, em: Emitter, seed: int):
    w, k, grid, res = _solve_from_config(cfg)
    n_max = int(cfg.observables.get("n_max", 2))
    lam = float(cfg.observables.get("lambda", 1.0))
    mid = res.snapshots[len(res.snapshots) // 2]
    h = hierarchy(w, mid, n_max=n_max, lam=lam)

    norm_rows = []
    for t, ob in h.observables.items():
        name = t.to_text()
        norm_rows.append((name, t.order, ob.l2_norm(), ob.sup_norm()))
        if t.order <= 2:
            if t.order == 1:
                rows = [(grid.centers()[i], ob.values[i]) for i in range(grid.n_cells)]
                em.write_csv(f"tau_{name.replace(',', '_')}.csv", ["x1", "value"], rows)
            else:
                rows = []
                for i in range(grid.n_cells):
                    for j in range(grid.n_cells):
                        rows.append((grid.centers()[i], grid.centers()[j], ob.values[i, j]))
                em.write_csv(f"tau_{name.replace(',', '_')}.csv", ["x1", "x2", "value"], rows)
        else:
            em.write_lattice(f"tau_{name.replace(',', '_')}.bin", t.order, grid.n_cells, ob.values)
    em.write_csv("hierarchy_norms.csv", ["tree", "order", "l2", "sup"], norm_rows)
    admissible, threshold = lambda_admissible(lam, w, mid, k, t_star=float(cfg.time["t_end"]))
    em.write_json("hierarchy_norm.json", {
        "lambda": lam, "n_max": n_max, "norm_truncated_lower_bound": hierarchy_norm(h),
        "lambda_admissible": admissible, "sqrt_lambda_threshold": threshold,
    })

    if len(res.snapshots) >= 3:
        rows = []
        for order in (1, 2):
            if order > n_max:
                continue
            for t in enumerate_trees(order):
                rep = hierarchy_residual(t, w, res.snapshots, k, nu=cfg.nu)
                rows.append((t.to_text(), order, rep.value, rep.dt, rep.dx))
        em.write_csv("hierarchy_residuals.csv", ["tree", "order", "l1_residual", "dt", "dx"], rows)


def cmd_rearrange(cfg: ExperimentConfig, em: Emitter, seed: int):
    ra = cfg.rearrange
    levels = int(ra.get("levels", 3))
    # default: the squared piece count (the natural scale of the modulus
    # bound) capped so high level counts stay tractable
    default_cells = n_pieces(levels) * max(1, 4096 // n_pieces(levels))
    cells = int(ra.get("cells", default_cells))
    rng = seeding.stream(seed, seeding.GRAPH, levels)
    vals = np.empty((levels, cells))
    for m in range(1, levels + 1):
        vals[m - 1] = rng.random(cells) * 2.0 ** (1 - m)
    vals = np.maximum(vals, 1e-12)
    g = CellFunctions(values=vals, mode="strict")
    phi = build_phi(g)
    save_permutation(phi, em.out_dir / "permutation.txt")
    em.register_file(em.out_dir / "permutation.txt")

    shifts = sorted({max(1, cells // (2**j)) for j in range(1, 14)})
    table = modulus(g, phi, shifts)
    rows = [(s, s / cells, m) for s, m in sorted(table.items())]
    em.write_csv("modulus.csv", ["shift_cells", "shift_fraction", "modulus"], rows)
    em.write_json("modulus_fit.json", {
        "fitted_constant": fit_modulus_constant(table, cells),
        "note": "informational; acceptance uses the level bound 3*2^-k",
    })


def cmd_convergence(cfg: ExperimentConfig, em: Emitter, seed: int):
    w = cfg.build_weights()
    k = cfg.build_kernel()
    grid = cfg.build_grid()
    laws = cfg.build_laws(w.n_agents)
    t_end = float(cfg.time["t_end"])
    snaps = sorted(float(s) for s in cfg.time.get("snapshots", [t_end]))
    dt = float(cfg.time.get("dt", 0.01))

    rep = independence_gap(w, k, laws, grid, t_end, dt, seed,
                           n_replicas=max(100, cfg.replicas), sigma=cfg.sigma)
    em.write_csv("independence_gap.csv", ["t", "gap", "bound", "stderr", "seeds"],
                 _gap_rows([rep]))
    reports = meanfield_gap(w, k, laws, grid, snaps, dt, seed,
                            n_seeds=max(2, cfg.replicas), sigma=cfg.sigma)
    em.write_csv("meanfield_gap.csv", ["t", "gap", "bound", "stderr", "seeds"],
                 _gap_rows(reports))


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "observe": cmd_observe,
    "rearrange": cmd_rearrange,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nxmf",
                                description="mean-field laboratory for sparse agent networks")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker cap (results unchanged)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg.seed
    threads = args.threads if args.threads is not None else cfg.threads
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir)
    em = Emitter(out_dir)
    try:
        COMMANDS[args.command](cfg, em, seed)
    except (ConfigError, LatticeBudgetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CFLError, StabilityError) as exc:
        print(f"numeric guard: [{args.command}] {exc}", file=sys.stderr)
        return 3
    em.manifest(cfg, args.command, seed, threads)
    return 0


if __name__ == "__main__":
    sys.exit(main())
