"""Command orchestration: run one analysis, write its outputs atomically.

Every command produces CSV/JSON outputs plus a run manifest holding the
config echo, the package version, timestamps and a sha256 per output
file.  Files are fully materialized in memory, written to temporary
names in the output directory and renamed into place, manifest last, so
a failed run leaves no partial outputs and a present manifest certifies
a complete one.  Identical config and seed yield byte-identical outputs
(floats are formatted with 17 significant digits; JSON keys are sorted).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

import fewmode
from fewmode.config import (
    ExperimentConfig,
    build_field,
    build_forcing,
    build_params,
)
from fewmode.errors import ConfigurationError
from fewmode.lattice import ModeSet, as_mode, check_hypoellipticity
from fewmode.spectral import field_to_json_dict
from fewmode.dynamics import (
    SeedRecord,
    save_states_binary,
    simulate,
    trajectory_to_csv,
)
from fewmode.malliavin import (
    ProjectionBasis,
    malliavin_adjoint,
    malliavin_forward,
    min_eigen,
    tail_statistics,
)
from fewmode.ergodic import (
    gradient_semigroup,
    projected_density,
    two_start_convergence,
)

COMMANDS = (
    "analyze-forcing",
    "simulate",
    "malliavin",
    "tail",
    "ergodic",
    "density",
    "gradient",
)

MANIFEST_NAME = "run_manifest.json"


@dataclass
class CommandOutcome:
    command: str
    output_dir: str
    outputs: list[tuple[str, str]]  # (file name, sha256)
    summary: dict
    manifest: dict


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _json_bytes(payload: dict) -> bytes:
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _require(block, command: str, name: str):
    if block is None:
        raise ConfigurationError(
            f"command {command!r} requires a {name!r} block in the config"
        )
    return block


def _csv_lines(header: list[str], rows) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _matrix_csv(entries: np.ndarray) -> bytes:
    rows = (
        [str(i), str(j), _fmt(entries[i, j])]
        for i in range(entries.shape[0])
        for j in range(entries.shape[1])
    )
    return _csv_lines(["row", "col", "value"], rows)


def _run_analyze(cfg: ExperimentConfig) -> tuple[dict[str, bytes], dict]:
    block = _require(cfg.analysis, "analyze-forcing", "analysis")
    report = check_hypoellipticity(build_forcing(cfg), block.box_radius)
    outputs = {"hypo_report.json": _json_bytes(report.to_json_dict())}
    summary = {
        "saturated": report.saturated,
        "generates": report.generates,
        "unequal_norms": report.unequal_norms,
        "box_radius": block.box_radius,
        "box_covered": report.covers_box(),
        "reached_modes": len(report.witness),
    }
    return outputs, summary


def _run_simulate(cfg: ExperimentConfig):
    block = _require(cfg.simulate, "simulate", "simulate")
    params = build_params(cfg)
    w0 = build_field(cfg.initial, params.trunc, "initial")
    traj = simulate(params, w0, block.time_horizon, SeedRecord(cfg.seed))
    record = None
    if block.record_modes:
        for m in block.record_modes:
            if m not in params.trunc:
                raise ConfigurationError(
                    f"simulate.record_modes: mode {list(m)} outside the truncation"
                )
        record = [as_mode(m) for m in block.record_modes]
    outputs = {"trajectory.csv": trajectory_to_csv(traj, record).encode("utf-8")}
    binary_name = "states.bin" if block.binary_states else None
    final = traj.state_field(traj.end_index)
    summary = {
        "n_steps": traj.n_steps,
        "final_norm_l2": final.norm_l2(),
        "final_norm_h1": final.norm_h1(),
    }
    return outputs, summary, traj, binary_name


def _run_malliavin(cfg: ExperimentConfig) -> tuple[dict[str, bytes], dict]:
    block = _require(cfg.malliavin, "malliavin", "malliavin")
    params = build_params(cfg)
    w0 = build_field(cfg.initial, params.trunc, "initial")
    try:
        basis = ProjectionBasis(params.trunc, ModeSet(block.basis_modes))
    except ValueError as err:
        raise ConfigurationError(f"malliavin.basis_modes: {err}") from err
    traj = simulate(params, w0, block.time_horizon, SeedRecord(cfg.seed))
    matrix = malliavin_adjoint(traj, basis)
    lam, _ = min_eigen(matrix)
    outputs = {"malliavin_adjoint.csv": _matrix_csv(matrix.entries)}
    meta = {
        "t": matrix.t,
        "basis_modes": basis.modes.to_pairs(),
        "representation": block.representation,
        "trajectory_seed": {"master": cfg.seed, "stream": 0},
        "lambda_min": lam,
        "trace": matrix.trace(),
        "psd_ok": matrix.psd_ok(),
    }
    summary = {"lambda_min": lam, "trace": matrix.trace(), "psd_ok": matrix.psd_ok()}
    if block.representation in ("forward", "both"):
        forward = malliavin_forward(traj, basis)
        outputs["malliavin_forward.csv"] = _matrix_csv(forward.entries)
        agreement = float(
            np.abs(forward.entries - matrix.entries).max() / max(matrix.trace(), 1e-300)
        )
        meta["forward_adjoint_relative_gap"] = agreement
        summary["forward_adjoint_relative_gap"] = agreement
    outputs["malliavin_meta.json"] = _json_bytes(meta)
    return outputs, summary


def _run_tail(cfg: ExperimentConfig) -> tuple[dict[str, bytes], dict]:
    block = _require(cfg.tail, "tail", "tail")
    params = build_params(cfg)
    w0 = build_field(cfg.initial, params.trunc, "initial")
    try:
        basis = ProjectionBasis(params.trunc, ModeSet(block.basis_modes))
    except ValueError as err:
        raise ConfigurationError(f"tail.basis_modes: {err}") from err
    estimate = tail_statistics(
        params,
        w0,
        basis,
        block.time_horizon,
        block.epsilons,
        block.n_samples,
        SeedRecord(cfg.seed),
        workers=cfg.workers,
    )
    curve = _csv_lines(
        ["epsilon", "probability", "stderr"],
        (
            [_fmt(e), _fmt(p), _fmt(s)]
            for e, p, s in zip(estimate.epsilons, estimate.probabilities, estimate.stderr)
        ),
    )
    samples = _csv_lines(
        ["sample", "lambda_min"],
        ([str(i), _fmt(v)] for i, v in enumerate(estimate.samples)),
    )
    meta = {
        "surrogate": estimate.surrogate,
        "t": block.time_horizon,
        "basis_modes": basis.modes.to_pairs(),
        "sample_count": estimate.sample_count,
        "initial_norm": estimate.initial_norm,
        "seed": {"master": cfg.seed, "streams": f"0..{block.n_samples - 1}"},
    }
    outputs = {
        "tail.csv": curve,
        "tail_samples.csv": samples,
        "tail_meta.json": _json_bytes(meta),
    }
    summary = {
        "surrogate": estimate.surrogate,
        "lambda_min_median": float(np.median(estimate.samples)),
        "lambda_min_min": float(estimate.samples.min()),
        "lambda_min_max": float(estimate.samples.max()),
    }
    return outputs, summary


def _run_ergodic(cfg: ExperimentConfig) -> tuple[dict[str, bytes], dict]:
    block = _require(cfg.ergodic, "ergodic", "ergodic")
    params = build_params(cfg)
    w0a = build_field(cfg.initial, params.trunc, "initial")
    w0b = build_field(block.second_start, params.trunc, "ergodic.second_start")
    try:
        obs = block.observable.build()
    except ValueError as err:
        raise ConfigurationError(f"ergodic.observable: {err}") from err
    result = two_start_convergence(
        params,
        w0a,
        w0b,
        obs,
        block.time_horizon,
        (SeedRecord(cfg.seed, 0), SeedRecord(cfg.seed, 1)),
    )
    series = _csv_lines(
        ["t", "average_a", "average_b", "gap"],
        (
            [_fmt(t), _fmt(a), _fmt(b), _fmt(g)]
            for t, a, b, g in zip(
                result.times, result.averages_a, result.averages_b, result.gap
            )
        ),
    )
    meta = {
        "observable": obs.label(),
        "time_horizon": block.time_horizon,
        "final_gap": result.final_gap,
        "stderr_a": result.stderr_a,
        "stderr_b": result.stderr_b,
        "combined_stderr": result.combined_stderr,
        "batch_count": 30,
        "seeds": [
            {"master": s.master, "stream": s.stream} for s in result.seeds
        ],
        "note": "consistency diagnostic; uniqueness of the invariant law is not certified",
    }
    outputs = {"ergodic_averages.csv": series, "ergodic_meta.json": _json_bytes(meta)}
    summary = {
        "final_gap": result.final_gap,
        "combined_stderr": result.combined_stderr,
        "gap_within_2x_stderr": result.final_gap <= 2.0 * result.combined_stderr,
    }
    return outputs, summary


def _run_density(cfg: ExperimentConfig) -> tuple[dict[str, bytes], dict]:
    block = _require(cfg.density, "density", "density")
    params = build_params(cfg)
    w0 = build_field(cfg.initial, params.trunc, "initial")
    hist = projected_density(
        params,
        w0,
        block.modes,
        block.t_snapshot,
        block.n_samples,
        block.bins,
        SeedRecord(cfg.seed),
        workers=cfg.workers,
    )
    n_axes = len(hist.edges)
    counts = np.asarray(hist.counts)
    index_grid = np.indices(counts.shape).reshape(n_axes, -1).T
    rows = (
        [str(int(i)) for i in idx] + [str(int(counts[tuple(idx)]))]
        for idx in index_grid
    )
    counts_csv = _csv_lines([f"bin{i}" for i in range(n_axes)] + ["count"], rows)
    edges_csv = _csv_lines(
        ["axis", "index", "edge"],
        (
            [str(axis), str(i), _fmt(edge)]
            for axis, edges in enumerate(hist.edges)
            for i, edge in enumerate(edges)
        ),
    )
    meta = {
        "modes": hist.modes.to_pairs(),
        "t_snapshot": block.t_snapshot,
        "sample_count": hist.sample_count,
        "bins": block.bins,
        "seed": {"master": cfg.seed, "streams": f"0..{block.n_samples - 1}"},
    }
    outputs = {
        "density_counts.csv": counts_csv,
        "density_edges.csv": edges_csv,
        "density_meta.json": _json_bytes(meta),
    }
    summary = {
        "sample_count": hist.sample_count,
        "occupied_bins": int((counts > 0).sum()),
        "total_bins": int(counts.size),
    }
    return outputs, summary


def _run_gradient(cfg: ExperimentConfig) -> tuple[dict[str, bytes], dict]:
    block = _require(cfg.gradient, "gradient", "gradient")
    params = build_params(cfg)
    w0 = build_field(cfg.initial, params.trunc, "initial")
    xi = build_field(block.direction, params.trunc, "gradient.direction")
    try:
        obs = block.observable.build()
        estimate, stderr = gradient_semigroup(
            params, w0, obs, xi, block.time_horizon, block.n_samples, SeedRecord(cfg.seed)
        )
    except ValueError as err:
        raise ConfigurationError(f"gradient: {err}") from err
    outputs = {
        "gradient.csv": _csv_lines(
            ["estimate", "stderr", "n_samples"],
            [[_fmt(estimate), _fmt(stderr), str(block.n_samples)]],
        ),
        "gradient_meta.json": _json_bytes(
            {
                "observable": obs.label(),
                "time_horizon": block.time_horizon,
                "n_samples": block.n_samples,
                "estimate": estimate,
                "stderr": stderr,
                "direction": field_to_json_dict(xi),
            }
        ),
    }
    return outputs, {"estimate": estimate, "stderr": stderr}


def _atomic_write(directory: str, name: str, data: bytes) -> None:
    fd, tmp_path = tempfile.mkstemp(prefix=f".{name}.", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp_path, 0o644)
        os.replace(tmp_path, os.path.join(directory, name))
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def run_command(command: str, cfg: ExperimentConfig) -> CommandOutcome:
    """Execute one command and write its outputs plus the run manifest."""
    if command not in COMMANDS:
        raise ConfigurationError(
            f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}"
        )
    started = datetime.now(timezone.utc).isoformat()
    traj = None
    binary_name = None
    if command == "analyze-forcing":
        outputs, summary = _run_analyze(cfg)
    elif command == "simulate":
        outputs, summary, traj, binary_name = _run_simulate(cfg)
    elif command == "malliavin":
        outputs, summary = _run_malliavin(cfg)
    elif command == "tail":
        outputs, summary = _run_tail(cfg)
    elif command == "ergodic":
        outputs, summary = _run_ergodic(cfg)
    elif command == "density":
        outputs, summary = _run_density(cfg)
    else:
        outputs, summary = _run_gradient(cfg)

    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    checksums: dict[str, str] = {}
    for name, data in outputs.items():
        _atomic_write(out_dir, name, data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    if traj is not None and binary_name is not None:
        tmp = os.path.join(out_dir, f".{binary_name}.tmp-{os.getpid()}")
        save_states_binary(traj, tmp)
        os.replace(tmp, os.path.join(out_dir, binary_name))
        with open(os.path.join(out_dir, binary_name), "rb") as fh:
            checksums[binary_name] = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "package_version": fewmode.__version__,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "outputs": checksums,
    }
    _atomic_write(out_dir, MANIFEST_NAME, _json_bytes(manifest))
    return CommandOutcome(
        command, out_dir, sorted(checksums.items()), summary, manifest
    )
