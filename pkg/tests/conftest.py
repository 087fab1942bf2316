import time

import numpy as np
import pytest

from epitwin.model import GridSpec, ModelParams
from epitwin.seirs import simulate


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def default_run_timed(grid, params):
    """The full 3880-step default simulation and its wall time in seconds."""
    t0 = time.perf_counter()
    series = simulate(params, grid)
    return series, time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_run(default_run_timed):
    return default_run_timed[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def default_snapshots(default_run):
    from epitwin.rom import build_snapshots
    return build_snapshots(default_run, 10)


@pytest.fixture(scope="session")
def default_latent(default_snapshots):
    """15-PC latent series of the default run, compartment-normalised."""
    from epitwin.rom import fit_pca
    basis = fit_pca(default_snapshots, 15, "compartment")
    return basis, basis.project(default_snapshots.data)


# ---------------------------------------------------------------- CLI pipeline

PIPELINE = [
    ["simulate"],
    ["eigen"],
    ["rom-fit"],
    ["train-lstm"],
    ["train-ffn"],
    ["train-gan"],
    *[["predict", "--method", m] for m in ("bdlstm", "bdlstm-blue", "ffn-blue", "predictive-gan")],
    *[["evaluate", "--method", m] for m in ("bdlstm", "bdlstm-blue", "ffn-blue", "predictive-gan")],
    ["compare", "--reps", "3"],
    ["bench", "--reps", "3"],
]

# wall-clock artifacts, exempt from bitwise reproducibility
TIMING_ARTIFACTS = {"table_times.csv", "bench.csv"}


def run_cli(*args):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "epitwin.cli", *args], capture_output=True, text=True)
    if proc.returncode != 0:
        raise AssertionError(f"epitwin {' '.join(args)} failed:\n{proc.stdout}\n{proc.stderr}")
    return proc.stdout


def run_pipeline(out, *flags):
    return {" ".join(step): run_cli(*step, "--out", str(out), *flags) for step in PIPELINE}


@pytest.fixture(scope="session")
def ci_pipeline(tmp_path_factory):
    """Every subcommand once, in the CI profile; returns (directory, stdout per step)."""
    out = tmp_path_factory.mktemp("ci_a")
    return out, run_pipeline(out, "--profile", "ci")


@pytest.fixture(scope="session")
def ci_pipeline_rerun(ci_pipeline, tmp_path_factory):
    """The same pipeline regenerated from the first run's resolved config."""
    first, _ = ci_pipeline
    out = tmp_path_factory.mktemp("ci_b")
    return out, run_pipeline(out, "--config", str(first / "resolved_config.json"))


# ---------------------------------------------------------------- trained surrogates

@pytest.fixture(scope="session")
def default_bdlstm(default_latent):
    """BDLSTM trained with the default hyperparameters, cached per seed."""
    from epitwin.lstm import LstmHyper, train_bdlstm

    cache = {}

    def get(seed=0):
        if seed not in cache:
            cache[seed] = train_bdlstm(default_latent[1], LstmHyper(seed=seed))
        return cache[seed]

    return get


@pytest.fixture(scope="session")
def default_gan_latent(default_snapshots):
    """Unnormalised 15-PC basis and latent series used by the GAN."""
    from epitwin.rom import fit_pca

    basis = fit_pca(default_snapshots, 15, "none")
    return basis, basis.project(default_snapshots.data)


@pytest.fixture(scope="session")
def default_gan(default_gan_latent):
    from epitwin.gan import GanHyper, train_gan

    return train_gan(default_gan_latent[1], GanHyper())


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(label, ok: bool, detail: str):
        results[str(label)] = (bool(ok), detail)
        print(f"criterion {label}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(results, key=lambda s: (int(s.rstrip("abc")), s)):
        ok, detail = results[label]
        terminalreporter.write_line(f"criterion {label:>3}: {'PASS' if ok else 'FAIL'}  {detail}")
