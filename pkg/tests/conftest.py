import pytest

from cepsonar import pipeline

# a short, fast corpus: 480 m transits at 40 m/s (about 24 s each), half-second
# segments, a handful of examples and one-epoch training phases
TINY_CONFIG_TEXT = """\
scenario.start_range = 480
scenario.end_range = 480
scenario.speed = 40
segment_seconds = 0.5
hop_seconds = 0.5
background_recording_seconds = 4
transits.train = 1
transits.val = 1
transits.test = 1
transits.gen = 1
examples.train = 24
examples.val = 8
examples.test = 12
examples.gen = 8
far_field_repeat = 2
phase1.max_epochs = 1
phase1.batch_size = 8
phase2.max_epochs = 1
phase2.batch_size = 8
sweep_snrs_db = 0 20
"""


def tiny_config(**overrides) -> pipeline.ExperimentConfig:
    values = pipeline.parse_key_values(TINY_CONFIG_TEXT)
    values.update({k: str(v) for k, v in overrides.items()})
    return pipeline.config_from_mapping(values)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory, tiny_cfg):
    d = tmp_path_factory.mktemp("corpus")
    pipeline.simulate_corpus(tiny_cfg, str(d))
    return d


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def report_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
