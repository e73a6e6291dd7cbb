import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from texhand.diffcore import set_check_finite


@pytest.fixture(autouse=True)
def _check_finite():
    set_check_finite(True)
    yield
    set_check_finite(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---- acceptance suite support -------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    def _record(num: int, name: str, ok: bool, detail: str) -> None:
        line = f"criterion {num:2d} {name}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE[num] = line
        print("\n" + line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[num])


@dataclass
class WarmModel:
    params: object
    config: object
    init_eval: dict
    final_eval: dict
    steps: int
    seconds: float
    cached: bool


def _source_hash() -> str:
    import texhand

    root = Path(texhand.__file__).parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.suffix in (".py", ".pyx", ".obj", ".json") and "__pycache__" not in path.parts:
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()[:12]


@pytest.fixture(scope="session")
def run_config():
    from texhand.config import RunConfig

    return RunConfig()


@pytest.fixture(scope="session")
def train_scenes(run_config):
    from texhand.synthtrain import gen_dataset

    return gen_dataset(run_config.data.n_train, run_config.seed, run_config.scene)


@pytest.fixture(scope="session")
def eval_scenes(run_config):
    from texhand.synthtrain import gen_dataset

    return gen_dataset(run_config.data.n_eval, run_config.seed, run_config.scene, offset=10 ** 6)


@pytest.fixture(scope="session")
def warm(request, run_config, train_scenes, eval_scenes):
    """The desk-config warm-up, trained once and cached across sessions."""
    from texhand.synthtrain import warmup_train
    from texhand.texnet import init_params, load_model, save_model

    cache = request.config.cache.mkdir(f"texhand-warm-{run_config.run_id}-{_source_hash()}")
    ckpt, summary = cache / "model.ckpt", cache / "summary.json"
    if ckpt.exists() and summary.exists():
        params, cfg = load_model(ckpt, run_config.texnet)
        s = json.loads(summary.read_text())
        return WarmModel(params, cfg, s["init_eval"], s["final_eval"], s["steps"], s["seconds"], True)
    params = init_params(run_config.texnet)
    t0 = time.perf_counter()
    res = warmup_train(params, run_config.texnet, train_scenes, eval_scenes, run_config.train, run_config.loss)
    secs = time.perf_counter() - t0
    save_model(ckpt, params, run_config.texnet, {"step": res.steps_run})
    summary.write_text(json.dumps({"init_eval": res.init_eval, "final_eval": res.final_eval,
                                   "steps": res.steps_run, "seconds": secs}))
    return WarmModel(params, run_config.texnet, res.init_eval, res.final_eval, res.steps_run, secs, False)
