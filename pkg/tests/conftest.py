"""Shared fixtures for the heavyweight end-to-end checks.

Trained artifacts (experiment runs, the sampler-fidelity checkpoint, the
degradation curves) are cached under .cache/ at the repository root, keyed by
config hash, so repeated test sessions reuse them instead of retraining.
"""

import warnings

import pytest

import acceptance_configs as AC


@pytest.fixture(scope="session")
def split_reports():
    """Aggregated reports for the 5-task split benchmark and its ablations."""
    from diffreplay.experiments import run

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {name: run(config) for name, config in AC.SPLIT_BENCHMARK.items()}


@pytest.fixture(scope="session")
def repeat_report(split_reports):
    """A from-scratch rerun of the full method in a separate output directory."""
    from diffreplay.experiments import run

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run(AC.REPEAT_RUN)


@pytest.fixture(scope="session")
def gauss_fidelity():
    """(model, schedule, task) for the two-mode mixture sampler check."""
    return AC.gauss_fidelity_model()


@pytest.fixture(scope="session")
def ssl_reports():
    """Reports for the label_ratio=0.1 run and its labeled-only baseline."""
    from diffreplay.experiments import run

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {"joint": run(AC.SSL_JOINT), "fine_tuning": run(AC.SSL_FINE_TUNING)}


@pytest.fixture(scope="session")
def motivation_results():
    """Seed-mean degradation curves with and without distillation."""
    return {"no_kd": AC.run_motivation_cached(False),
            "with_kd": AC.run_motivation_cached(True)}
