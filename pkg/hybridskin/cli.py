import argparse
import json
import logging
import os
import re
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .config import load_run_config, save_run_config
from .energy import arap_energy, normal_consistency
from .errors import DataError, NumericalError, UsageError
from .fitting import fit_sequence, vertex_rmse
from .gaussians import bind_gaussians, deform_gaussians, load_gaussians, save_gaussians
from .graph import build_graph, clamp_node_count, load_graph, sample_control_nodes, save_graph
from .mesh import Mesh, load_obj, write_obj
from .models import EnergyDoc, FrameReport, RotationsDoc, RunConfig, TrajectoryDoc
from .rotations import rotvec_to_matrix
from .skinning import MODES, deform_mesh, load_trajectory, save_trajectory


logger = logging.getLogger("hybridskin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
MAX_WORKERS = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="plain-text key = value run configuration")
    for name in ("mesh", "graph", "trajectory", "targets", "gaussians", "rotations", "deformed", "out"):
        common.add_argument(f"--{name}")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--metric", choices=("geodesic", "euclidean"))
    common.add_argument("--optimizer", choices=("gd", "lbfgs"))
    for name, kind in (
        ("n-node", int),
        ("n-neighbor", int),
        ("per-face", int),
        ("seed", int),
        ("max-iters", int),
        ("lambda-arap", float),
        ("lambda-nc", float),
        ("step-size", float),
        ("convergence-tol", float),
    ):
        common.add_argument(f"--{name}", type=kind)
    common.add_argument("--serial", action="store_const", const=True, help="evaluate on a single thread")

    parser = _Parser(prog="hybridskin", description="Deformation-graph skinning, Gaussian binding and fitting")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("build-graph", parents=[common], help="sample control nodes and write a graph JSON")
    sub.add_parser("deform", parents=[common], help="skin the mesh for every trajectory frame")
    sub.add_parser("fit", parents=[common], help="recover a trajectory from target OBJ frames")
    sub.add_parser("energy", parents=[common], help="print ARAP and normal-consistency energies")
    sub.add_parser("bind-gaussians", parents=[common], help="bind flat Gaussians to the mesh faces")
    return parser


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [f"--{n}" for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def _workers(cfg: RunConfig) -> int:
    return 1 if cfg.serial else min(MAX_WORKERS, os.cpu_count() or 1)


def _load_same_connectivity(path: Path, mesh: Mesh) -> Mesh:
    other = load_obj(path)
    if other.faces.shape != mesh.faces.shape or not np.array_equal(other.faces, mesh.faces):
        raise DataError(f"{path}: connectivity differs from the rest mesh")
    return other


def cmd_build_graph(cfg: RunConfig) -> Dict[str, Any]:
    _require(cfg, "mesh", "out")
    mesh = load_obj(cfg.mesh)
    n_node, warnings = clamp_node_count(mesh, cfg.n_node)
    nodes = sample_control_nodes(mesh, n_node)
    graph = build_graph(mesh, nodes, cfg.n_neighbor, cfg.metric)
    save_graph(cfg.out, graph)
    return {"nodes": graph.n_nodes, "warnings": warnings}


def cmd_deform(cfg: RunConfig) -> Dict[str, Any]:
    _require(cfg, "mesh", "graph", "trajectory", "out")
    mesh = load_obj(cfg.mesh)
    graph = load_graph(cfg.graph, mesh)
    frames = load_trajectory(cfg.trajectory)
    gaussians = load_gaussians(cfg.gaussians, mesh) if cfg.gaussians is not None else None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    warnings: List[str] = []
    for k, (_, transforms) in enumerate(frames):
        deformation = deform_mesh(mesh, graph, transforms, cfg.mode, workers=_workers(cfg))
        write_obj(out / f"frame_{k:04d}.obj", mesh, deformation.positions)
        if gaussians is not None:
            moved, frame_warnings = deform_gaussians(gaussians, deformation)
            save_gaussians(out / f"gaussians_{k:04d}.json", moved, with_centers=True)
            warnings += [w for w in frame_warnings if w not in warnings]
    return {"frames": len(frames), "warnings": warnings}


def _natural_key(path: Path) -> List[Any]:
    # f2.obj sorts before f10.obj
    parts = re.split(r"(\d+)", path.name)
    return [int(p) if k % 2 else p for k, p in enumerate(parts)]


def _target_paths(targets: Path) -> List[Path]:
    if targets.is_file():
        return [targets]
    paths = sorted(targets.glob("*.obj"), key=_natural_key)
    if not paths:
        raise DataError(f"no target OBJ frames in {targets}")
    return paths


def cmd_fit(cfg: RunConfig) -> Dict[str, Any]:
    _require(cfg, "mesh", "graph", "targets", "out")
    mesh = load_obj(cfg.mesh)
    graph = load_graph(cfg.graph, mesh)
    targets = [_load_same_connectivity(p, mesh).vertices for p in _target_paths(Path(cfg.targets))]
    fit_cfg = cfg.fit_config()
    results = fit_sequence(mesh, graph, targets, fit_cfg)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = TrajectoryDoc(frames=[r.params.to_frame_doc(time=float(k)) for k, r in enumerate(results)])
    save_trajectory(out / "trajectory.json", doc)
    trace_rows = [{"frame": k, **p.model_dump()} for k, r in enumerate(results) for p in r.trace]
    pd.DataFrame(trace_rows, columns=["frame", "iter", "data", "arap", "nc", "total"]).to_csv(
        out / "trace.csv", index=False
    )
    bbox = mesh.bbox_diagonal
    reports = []
    for k, (r, y) in enumerate(zip(results, targets)):
        rmse = vertex_rmse(r.positions, y)
        reports.append(
            FrameReport(frame=k, rmse=rmse, rmse_over_bbox=rmse / bbox, iterations=r.iterations, converged=r.converged)
        )
    pd.DataFrame([r.model_dump() for r in reports]).to_csv(out / "report.csv", index=False)
    save_run_config(out / "run_config.json", cfg)
    return {"frames": len(results), "max_rmse_over_bbox": max(r.rmse_over_bbox for r in reports)}


def _load_rotations(path: Path, mesh: Mesh) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = RotationsDoc.model_validate(json.load(f))
        except (json.JSONDecodeError, UnicodeDecodeError, ValidationError) as e:
            raise DataError(f"{path}: invalid rotations document: {e}") from None
    rotvecs = np.asarray(doc.rotvecs, dtype=np.float64).reshape(-1, 3)
    return mesh.check_field(rotvec_to_matrix(rotvecs), "rotations", trailing=(3, 3))


def cmd_energy(cfg: RunConfig) -> Dict[str, Any]:
    _require(cfg, "mesh", "deformed")
    mesh = load_obj(cfg.mesh)
    deformed = _load_same_connectivity(Path(cfg.deformed), mesh).vertices
    if cfg.rotations is not None:
        rotations = _load_rotations(Path(cfg.rotations), mesh)
    else:
        rotations = np.tile(np.eye(3), (mesh.n_vertices, 1, 1))
    doc = EnergyDoc(
        arap=arap_energy(mesh, deformed, rotations).value,
        nc=normal_consistency(mesh, deformed).value,
    )
    sys.stdout.write(doc.model_dump_json() + "\n")
    return doc.model_dump()


def cmd_bind_gaussians(cfg: RunConfig) -> Dict[str, Any]:
    _require(cfg, "mesh", "out")
    mesh = load_obj(cfg.mesh)
    gaussians = bind_gaussians(mesh, cfg.per_face)
    save_gaussians(cfg.out, gaussians)
    return {"gaussians": len(gaussians)}


COMMANDS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "build-graph": cmd_build_graph,
    "deform": cmd_deform,
    "fit": cmd_fit,
    "energy": cmd_energy,
    "bind-gaussians": cmd_bind_gaussians,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    run_id = str(int(time.time() * 1000))
    start = time.time()
    command = None
    summary: Dict[str, Any] = {}
    code = EXIT_OK
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop("command")
        cfg = load_run_config(args.pop("config"), args)
        summary = COMMANDS[command](cfg)
    except UsageError as e:
        code = EXIT_USAGE
        logger.error(json.dumps({"run_id": run_id, "error": str(e)}))
    except (DataError, OSError) as e:
        code = EXIT_DATA
        logger.error(json.dumps({"run_id": run_id, "error": str(e)}))
    except NumericalError as e:
        code = EXIT_NUMERICAL
        logger.error(json.dumps({"run_id": run_id, "error": str(e)}))
    finally:
        logger.info(
            json.dumps(
                {
                    "run_id": run_id,
                    "command": command,
                    "status": "ok" if code == EXIT_OK else "error",
                    "exit_code": code,
                    "latency_ms": int((time.time() - start) * 1000),
                    **summary,
                }
            )
        )
    return code
