import os

# tiny-matrix GEMMs run fastest single-threaded; set before numpy loads
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from ditlab import formats, ndgrad as ng
from ditlab.teacher import Teacher, TeacherConfig


def tiny_run_config(**overrides) -> dict:
    """A seconds-scale run config for trainer/cli tests."""
    cfg = formats.default_config()
    cfg["student"].update(width=32, heads=2, time_dim=32, mlp_ratio=2)
    cfg["teacher"].update(width=32, heads=2, mlp_ratio=2, pretrain_steps=30)
    cfg["align"].update(aligned_heads=2)
    cfg["schedule"].update(tau=4, probe_size=8, probe_t_grid=(0.1, 0.5))
    cfg["train"].update(steps=8, batch=8, lr=1e-3, eval_every=4, ckpt_every=4,
                        probe_every=4, eval_samples=8, eval_nfes=4)
    cfg["data"].update(n=128, holdout=0.25)
    for section, kv in overrides.items():
        cfg[section].update(kv)
    return cfg


@pytest.fixture(scope="session")
def frozen_toy_teacher():
    """Untrained but frozen encoder: deterministic features, zero train cost."""
    teacher = Teacher(TeacherConfig(width=32, heads=2, mlp_ratio=2), ng.Rng(424242))
    teacher.freeze()
    return teacher


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion that actually ran."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")


def clone_state(state, spec):
    """Deep copy of a RunState (params, moments, rng streams, history)."""
    from ditlab import trainer

    fresh = trainer.init_state(spec)
    for src, dst in ((state.student.params, fresh.student.params),
                     (state.projector.params, fresh.projector.params)):
        dst.load_values(src.copy_values())
    fresh.opt_theta.m_flat[:] = state.opt_theta.m_flat
    fresh.opt_theta.v_flat[:] = state.opt_theta.v_flat
    fresh.opt_theta.step_count = state.opt_theta.step_count
    fresh.opt_phi.m_flat[:] = state.opt_phi.m_flat
    fresh.opt_phi.v_flat[:] = state.opt_phi.v_flat
    fresh.opt_phi.step_count = state.opt_phi.step_count
    fresh.rngs = {k: ng.Rng.from_state(v.state()) for k, v in state.rngs.items()}
    fresh.step = state.step
    fresh.terminated = state.terminated
    fresh.probe_history = list(state.probe_history)
    return fresh
