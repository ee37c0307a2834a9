import io
import json
import sys
import time
from contextlib import redirect_stdout
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_acceptance_results = []


def record_acceptance(name, passed):
    _acceptance_results.append((name, passed))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in _acceptance_results:
        terminalreporter.write_line(f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'}")


OVERFIT_RUN_CONFIG = {
    "dataset": {
        "train": "train.jsonl",
        "features": {"mode": "toy", "seed": 0},
        "min_text_len": 1,
        "max_caption_len": 12,
    },
    "model": {
        "d_clip": 64, "k": 4, "d_model": 32, "d_attn": 64, "d_fuse": 128,
        "fusion_layers": 1, "heads": 2, "d_hidden": 64,
    },
    "optimizer": {
        "epochs": 200, "batch_size": 1, "seed": 0,
        "lr_decoder": 6.0, "lr_encoders": 1.2, "lr_fusion": 0.6,
        "lr_decay": 0.9, "weight_decay": 1e-5, "clip_norm": 0.5,
    },
    "output": {"dir": "out"},
}


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Train the 16-record synthetic corpus once through the CLI."""
    from figcap.cli import main
    from figcap.data import write_records

    from corpora import overfit_records

    root = tmp_path_factory.mktemp("overfit")
    records = overfit_records()
    write_records(records, root / "train.jsonl")
    config_path = root / "config.json"
    config_path.write_text(json.dumps(OVERFIT_RUN_CONFIG))

    stdout = io.StringIO()
    started = time.monotonic()
    with redirect_stdout(stdout):
        code = main(["train", "--config", str(config_path)])
    duration = time.monotonic() - started
    assert code == 0, "overfit training run failed"
    payload = json.loads(stdout.getvalue())
    return {
        "root": root,
        "config_path": config_path,
        "records": records,
        "checkpoint": payload["checkpoint"],
        "metrics": payload["metrics"],
        "duration": duration,
    }
