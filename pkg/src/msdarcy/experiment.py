"""Experiment orchestration: field setup, offline build, online loop, artifacts."""

from __future__ import annotations

import csv
import os
import shutil
import time

import numpy as np

from . import aux_space, coarse_system, fields, fine_fem, grid, offline_basis, online, pou
from .config import write_config
from .errors import ConfigError


def build_permeability(cfg):
    """Permeability raster per the config's field section."""
    nx = cfg.T * cfg.n
    if cfg.field_kind == "generator":
        return fields.gen_field(cfg.generator, cfg.contrast, cfg.seed, (nx, nx))
    if cfg.field_kind == "raster":
        return fields.load_raster(cfg.raster_path, cfg.raster_rows, cfg.raster_cols)
    return fields.load_spe10_layer(cfg.raster_path, cfg.spe10_layer,
                                   cfg.spe10_rows, cfg.spe10_cols)


def build_problem(cfg):
    """Mesh, assembled fine system, and source for a validated config."""
    mesh = grid.build_mesh(cfg.T, cfg.n)
    perm = build_permeability(cfg)
    kappa = perm.on_mesh(mesh)
    # the weight field needs unfolded hats: the folded family has vanishing
    # gradients over whole corner elements
    kt_mode = "interior_plain" if cfg.kappa_tilde_nodes == "interior" else "all"
    pou_kt = pou.build_pou(mesh, kt_mode)
    kt = fields.compute_kappa_tilde(kappa, pou_kt)
    sys_ = fine_fem.assemble(mesh, kappa, kt, lumped=cfg.lumped_mass)
    source = fields.box_source(cfg.boxes, mesh)
    return mesh, sys_, source


def _solution_rasters(sys_, u, p, out_dir, prefix):
    nx = sys_.mesh.nx
    ux, uy = sys_.cell_velocity(u)
    fields.save_raster(os.path.join(out_dir, f"{prefix}_ux.txt"), ux)
    fields.save_raster(os.path.join(out_dir, f"{prefix}_uy.txt"), uy)
    fields.save_raster(os.path.join(out_dir, f"{prefix}_p.txt"), p.reshape(nx, nx))


def write_history(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "dof", "e_u_percent", "eta_sq_sum",
                         "marked_count", "wall_seconds"])
        for row in rows:
            writer.writerow([
                row["m"], row["dof"],
                repr(float(row["e_u"] * 100.0)),
                repr(float(row["eta_sq_sum"])),
                row["marked_count"],
                "%.4f" % row["wall_seconds"],
            ])


def read_history(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for rec in reader:
                rows.append({
                    "m": int(rec["m"]), "dof": int(rec["dof"]),
                    "e_u": float(rec["e_u_percent"]) / 100.0,
                    "eta_sq_sum": float(rec["eta_sq_sum"]),
                    "marked_count": int(rec["marked_count"]),
                    "wall_seconds": float(rec["wall_seconds"]),
                })
    except FileNotFoundError:
        raise ConfigError(f"history file not found: {path}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"corrupt history file {path}: {e}") from None
    if not rows:
        raise ConfigError(f"history file {path} has no data rows")
    return rows


def format_table(rows, J, offline_seconds=None):
    """Plain-text table mirroring the published layout."""
    lines = ["  J    m     DOF         e_u     CPU time (sec)"]
    for row in rows:
        e_u = row["e_u"]
        err = "       n/a" if np.isnan(e_u) else "%9.5f%%" % (e_u * 100.0)
        cpu = "-" if row["m"] == 0 else "%.4f" % row["wall_seconds"]
        lines.append("%3d  %3d  %6d  %s     %s" % (J, row["m"], row["dof"], err, cpu))
    if offline_seconds is not None:
        lines.append("offline construction: %.4f seconds" % offline_seconds)
    return "\n".join(lines) + "\n"


def run_experiment(cfg, out_dir=None, config_path=None, progress=print):
    """Full pipeline: offline build, enrichment loop, artifact emission."""
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)

    t0 = time.perf_counter()
    mesh, sys_, source = build_problem(cfg)
    aux = aux_space.build_aux(mesh, sys_, cfg.J)

    basis = None
    checksum = offline_basis.field_checksum(sys_.kappa)
    if cfg.basis_cache and os.path.exists(cfg.basis_cache):
        try:
            basis = offline_basis.load_basis(
                cfg.basis_cache, mesh, cfg.J, cfg.layers_offline, checksum)
            progress(f"offline: loaded {len(basis)} basis fields from {cfg.basis_cache}")
        except ValueError as e:
            progress(f"offline: cache rejected ({e}); rebuilding")
    if basis is None:
        basis = offline_basis.build_offline_space(
            aux, sys_, cfg.layers_offline, workers=cfg.workers)
        if cfg.basis_cache:
            offline_basis.save_basis(cfg.basis_cache, basis, mesh, cfg.J,
                                     cfg.layers_offline, checksum)
    space = coarse_system.CoarseSpace(sys_, aux, basis)
    offline_seconds = time.perf_counter() - t0
    progress(f"offline: {space.dim} basis fields, spectral gap "
             f"{aux.spectral_gap:.4g}, {offline_seconds:.2f}s")

    reference = None
    if cfg.compute_reference:
        reference = fine_fem.solve_fine(sys_, source)

    pou_ind = pou.build_pou(mesh, cfg.indicator_nodes)
    state = online.iterate(
        sys_, aux, space, pou_ind, source,
        theta=cfg.theta, layers=cfg.layers_online, tol=cfg.tol,
        max_iterations=cfg.max_iterations, max_dof=cfg.max_dof,
        reference=reference, workers=cfg.workers, keep_solutions=True)
    for row in state.history:
        e_u = row["e_u"]
        err = "n/a" if np.isnan(e_u) else "%.5f%%" % (e_u * 100.0)
        progress(f"m={row['m']} dof={row['dof']} e_u={err} "
                 f"eta_sq={row['eta_sq_sum']:.4e} marked={row['marked_count']} "
                 f"({row['wall_seconds']:.2f}s)")

    # artifacts
    if config_path:
        shutil.copyfile(config_path, os.path.join(out_dir, "config.toml"))
    write_config(cfg, os.path.join(out_dir, "config_resolved.toml"))
    fields.save_raster(os.path.join(out_dir, "kappa.txt"),
                       sys_.kappa.reshape(mesh.nx, mesh.nx))
    aux_space.write_spectrum(aux, os.path.join(out_dir, "spectrum.csv"))
    write_history(os.path.join(out_dir, "history.csv"), state.history)
    with open(os.path.join(out_dir, "table.txt"), "w") as fh:
        fh.write(format_table(state.history, cfg.J, offline_seconds))
    if reference is not None:
        _solution_rasters(sys_, reference.u, reference.p, out_dir, "fine")
    if state.solutions:
        final = state.solutions[-1]
        _solution_rasters(sys_, final.u, final.p, out_dir, "ms")
    return state


def run_fine_solve(cfg, out_dir=None, progress=print):
    """Reference solve only: rasters plus a conservation/energy summary."""
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    mesh, sys_, source = build_problem(cfg)
    sol = fine_fem.solve_fine(sys_, source)
    residual = sys_.B @ sol.u - source.integrals()
    scale = np.abs(source.integrals()).max()
    conservation = np.abs(residual).max() / scale if scale > 0 else np.abs(residual).max()
    a_norm = sys_.a_norm(sol.u)
    fields.save_raster(os.path.join(out_dir, "kappa.txt"),
                       sys_.kappa.reshape(mesh.nx, mesh.nx))
    _solution_rasters(sys_, sol.u, sol.p, out_dir, "fine")
    summary = (f"a_norm = {a_norm!r}\n"
               f"max_conservation_residual_rel = {conservation!r}\n")
    with open(os.path.join(out_dir, "fine_summary.txt"), "w") as fh:
        fh.write(summary)
    progress(summary.strip())
    return sol, conservation


def manufactured_reference(mesh):
    """Smooth closed-form case on kappa = 1 with zero boundary flux.

    Returns (f_cells, exact edge interpolant): the pressure is a product of
    cosines, the velocity its negative gradient.
    """
    centers = mesh.cell_centers
    f = 2.0 * np.pi ** 2 * np.cos(np.pi * centers[:, 0]) * np.cos(np.pi * centers[:, 1])
    mid = mesh.edge_midpoints
    u = np.zeros(mesh.num_edges)
    nh = mesh.num_h_edges
    # horizontal edges carry the +y normal component, vertical the +x one
    u[:nh] = np.pi * np.cos(np.pi * mid[:nh, 0]) * np.sin(np.pi * mid[:nh, 1])
    u[nh:] = np.pi * np.sin(np.pi * mid[nh:, 0]) * np.cos(np.pi * mid[nh:, 1])
    return f, u


def manufactured_error(T, n, lumped=False):
    """a-norm error of the fine solver against the manufactured interpolant."""
    mesh = grid.build_mesh(T, n)
    kappa = np.ones(mesh.num_cells)
    pou_kt = pou.build_pou(mesh, "all")
    kt = fields.compute_kappa_tilde(kappa, pou_kt)
    sys_ = fine_fem.assemble(mesh, kappa, kt, lumped=lumped)
    f, u_exact = manufactured_reference(mesh)
    sol = fine_fem.solve_fine(sys_, fields.SourceField(f, mesh.h ** 2))
    return sys_.a_norm(sol.u - u_exact)


def manufactured_ratio(T, n, lumped=False):
    """Observed a-norm error ratio between mesh sizes h and h/2."""
    return manufactured_error(T, n, lumped) / manufactured_error(T, 2 * n, lumped)


def report(run_dirs, decay_name="decay.dat"):
    """Markdown table (side-by-side for several runs) plus decay data files."""
    histories = [(d, read_history(os.path.join(d, "history.csv"))) for d in run_dirs]
    for d, rows in histories:
        with open(os.path.join(d, decay_name), "w") as fh:
            fh.write("# m  e_u\n")
            for row in rows:
                fh.write(f"{row['m']} {row['e_u']!r}\n")

    def fmt(e):
        return "n/a" if np.isnan(e) else "%.5f%%" % (e * 100.0)

    if len(histories) == 1:
        d, rows = histories[0]
        lines = ["| m | DOF | e_u | CPU (s) |", "| --- | --- | --- | --- |"]
        for row in rows:
            cpu = "-" if row["m"] == 0 else "%.4f" % row["wall_seconds"]
            lines.append(f"| {row['m']} | {row['dof']} | {fmt(row['e_u'])} | {cpu} |")
        return "\n".join(lines) + "\n"

    names = [os.path.basename(os.path.normpath(d)) or d for d, _ in histories]
    header = "| m |" + "".join(f" DOF ({nm}) | e_u ({nm}) |" for nm in names)
    sep = "| --- |" + " --- | --- |" * len(names)
    depth = max(len(rows) for _, rows in histories)
    lines = [header, sep]
    for i in range(depth):
        cells = []
        for _, rows in histories:
            if i < len(rows):
                cells += [str(rows[i]["dof"]), fmt(rows[i]["e_u"])]
            else:
                cells += ["-", "-"]
        lines.append("| " + str(i) + " | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
