import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxlow import kernels  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    monkeypatch.setattr(kernels, "_impl", kernels.BACKENDS[request.param])
    return request.param


@pytest.fixture(scope="session")
def scenario(tmp_path_factory):
    """The 5-frame seeded scene, compiled and run once per session."""
    from voxlow.config import load_config
    from voxlow.graph import load_graph, save_graph
    from voxlow.lowering import lower
    from voxlow.pipeline import run_pipeline
    from voxlow.postproc import write_detections
    from voxlow.synth import write_scenario

    root = tmp_path_factory.mktemp("scenario")
    paths = write_scenario(root, frames=5, seed=0)
    cfg = load_config(paths["config"])
    g4, _ = lower(load_graph(paths["graph"]))
    save_graph(g4, root / "detector4.json")
    frames = sorted(paths["frames"].glob("*.csv"))
    dets, report = run_pipeline(frames, g4, cfg)
    write_detections(root / "dets.jsonl", dets, cfg.anchors.class_names)
    return {**paths, "root": root, "graph4": root / "detector4.json", "dets": root / "dets.jsonl",
            "cfg": cfg, "frame_files": frames, "report": report}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
