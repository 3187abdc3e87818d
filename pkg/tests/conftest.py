import pytest
from threadpoolctl import threadpool_limits

from relic_lab.config import EvalConfig, ModelConfig, RunConfig
from relic_lab.datagen import ContentStyleConfig
from relic_lab.nn import OptimizerConfig
from relic_lab.objective import preset


def tiny(seed: int = 0, out_dir: str = "runs/tiny", steps: int = 6, **objective) -> RunConfig:
    """A run small enough to train in well under a second."""
    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        data=ContentStyleConfig(n_content=3, n_style=2, height=8, width=8, samples_per_content=12),
        model=ModelConfig(encoder_widths=(16, 8)),
        objective=preset("relic", critic_widths=(8,), **objective),
        optimizer=OptimizerConfig(base_lr=1.0, batch_size=16, warmup_steps=2, total_steps=steps),
        eval=EvalConfig(test_samples_per_content=6, log_every=1, checkpoint_every=3, probe_epochs=20),
    )


@pytest.fixture
def tiny_config():
    return tiny()


@pytest.fixture(autouse=True, scope="session")
def _single_blas_thread():
    with threadpool_limits(1):
        yield


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
