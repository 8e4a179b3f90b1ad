"""
Run Directory Management Module
Persistence of reconstruction runs: clouds, meshes, step audits and the run manifest
"""

import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from camera import Trajectory
from cloud import PointCloud
from config import TOOL_VERSION, ReconstructionConfig
from error_handlers import InvalidArgumentError, describe_error
from fileio import (file_checksum, read_cloud, read_json, read_mesh, write_cloud, write_depth,
                    write_image, write_json, write_mask, write_mesh)
from logging_config import viewloom_logger
from performance_utils import perf_monitor
from pipeline import ReconstructionResult, StepRecord, audit_dict
from raster import TriangleMesh

logger = logging.getLogger(__name__)

CLOUD_FILE = "cloud.ply"
MESH_FILE = "mesh.ply"
AUDIT_FILE = "audit.json"
CONFIG_FILE = "config.json"
TRAJECTORY_FILE = "trajectory.json"
MANIFEST_FILE = "manifest.json"
STEPS_DIR = "steps"


class RunDirectory:
    """A run directory on disk, written deterministically apart from manifest.json."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.started_at = datetime.now(timezone.utc).isoformat()
        self._written: List[str] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def _record(self, relative: str, details: Optional[Dict[str, Any]] = None) -> Path:
        if relative not in self._written:
            self._written.append(relative)
        path = self.path(relative)
        viewloom_logger.log_file_written(str(path), details)
        return path

    def prepare(self) -> "RunDirectory":
        (self.root / STEPS_DIR).mkdir(parents=True, exist_ok=True)
        return self

    # writers ----------------------------------------------------------------------

    def write_cloud(self, pc: PointCloud, name: str = CLOUD_FILE) -> Path:
        write_cloud(self.path(name), pc)
        return self._record(name, {"points": len(pc)})

    def write_mesh(self, mesh: TriangleMesh, name: str = MESH_FILE) -> Path:
        write_mesh(self.path(name), mesh)
        return self._record(name, {"vertices": mesh.vertex_count, "faces": mesh.face_count})

    def write_json(self, name: str, data: Any) -> Path:
        write_json(self.path(name), data)
        return self._record(name)

    def write_step(self, record: StepRecord) -> List[Path]:
        """steps/NN_{partial,completed,depth,inpaint,holes}.{png,pfm} for one record."""
        prefix = f"{STEPS_DIR}/{record.step:02d}"
        written = []
        if record.partial is not None:
            write_image(self.path(f"{prefix}_partial.png"), record.partial.color, record.partial.coverage)
            written.append(self._record(f"{prefix}_partial.png"))
            write_depth(self.path(f"{prefix}_partial.pfm"), record.partial.depth)
            written.append(self._record(f"{prefix}_partial.pfm"))
        write_image(self.path(f"{prefix}_completed.png"), record.completed_color, record.foreground)
        written.append(self._record(f"{prefix}_completed.png"))
        write_depth(self.path(f"{prefix}_depth.pfm"), record.depth)
        written.append(self._record(f"{prefix}_depth.pfm"))
        write_mask(self.path(f"{prefix}_inpaint.png"), record.inpaint_mask)
        written.append(self._record(f"{prefix}_inpaint.png"))
        write_mask(self.path(f"{prefix}_holes.png"), record.hole_mask)
        written.append(self._record(f"{prefix}_holes.png"))
        return written

    def write_run(self, result: ReconstructionResult, config: ReconstructionConfig,
                  trajectory: Trajectory, mesh: Optional[TriangleMesh] = None,
                  extra: Optional[Dict[str, Any]] = None) -> Path:
        """Write the whole layout of a reconstruction or edit run and return the manifest path."""
        self.prepare()
        self.write_cloud(result.cloud)
        if mesh is not None:
            self.write_mesh(mesh)
        for record in result.records:
            self.write_step(record)
        audit = audit_dict(result.records, config)
        if extra:
            audit.update(extra)
        self.write_json(AUDIT_FILE, audit)
        self.write_json(CONFIG_FILE, config.to_dict())
        self.write_json(TRAJECTORY_FILE, trajectory.to_dict())
        return self.write_manifest(config)

    def write_failed_run(self, records: List[StepRecord], config: ReconstructionConfig,
                         trajectory: Trajectory, error: BaseException) -> Path:
        """Persist the partial audit of an aborted run."""
        self.prepare()
        for record in records:
            self.write_step(record)
        audit = audit_dict(records, config)
        audit["error"] = describe_error(error)
        self.write_json(AUDIT_FILE, audit)
        self.write_json(CONFIG_FILE, config.to_dict())
        self.write_json(TRAJECTORY_FILE, trajectory.to_dict())
        logger.warning(f"Run aborted after {len(records)} steps; partial audit in {self.root}")
        return self.write_manifest(config)

    def write_manifest(self, config: ReconstructionConfig) -> Path:
        """Inventory with sha256 checksums; the only file carrying timestamps and timings."""
        missing = [name for name in self._written if not self.path(name).exists()]
        if missing:
            raise InvalidArgumentError(f"Manifest lists files that do not exist: {', '.join(missing)}")
        manifest = {
            "tool_version": TOOL_VERSION,
            "config": config.to_dict(),
            "files": {name: {"sha256": file_checksum(self.path(name)),
                             "bytes": self.path(name).stat().st_size}
                      for name in sorted(self._written)},
            "started_at": self.started_at,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "timings": perf_monitor.summary(),
        }
        write_json(self.path(MANIFEST_FILE), manifest)
        logger.info(f"Run directory {self.root} complete with {len(self._written)} files")
        return self.path(MANIFEST_FILE)

    # readers ----------------------------------------------------------------------

    def read_cloud(self, name: str = CLOUD_FILE) -> PointCloud:
        return read_cloud(self.path(name))

    def read_mesh(self, name: str = MESH_FILE) -> TriangleMesh:
        return read_mesh(self.path(name))

    def read_config(self) -> ReconstructionConfig:
        return ReconstructionConfig.from_dict(read_json(self.path(CONFIG_FILE)))

    def read_trajectory(self) -> Trajectory:
        return Trajectory.from_dict(read_json(self.path(TRAJECTORY_FILE)))

    def read_audit(self) -> Dict[str, Any]:
        return read_json(self.path(AUDIT_FILE))

    def verify(self) -> Dict[str, bool]:
        """Compare every manifest checksum against the files on disk."""
        manifest = read_json(self.path(MANIFEST_FILE))
        status = {}
        for name, entry in manifest.get("files", {}).items():
            path = self.path(name)
            status[name] = path.exists() and file_checksum(path) == entry.get("sha256")
        return status


def step_points(pc: PointCloud) -> Dict[int, int]:
    """Point count per creating step, for summaries."""
    steps, counts = np.unique(pc.steps, return_counts=True)
    return {int(s): int(c) for s, c in zip(steps, counts)}
