import json
from pathlib import Path

import pytest

from rsearch.backends import ScriptedBackend
from rsearch.retrieval import build_index, read_corpus

DATA = Path(__file__).parent / "data"

COUNTRYWIDE_QUESTION = "When was countrywide bought by the company that bought FleetBoston Financial?"
FILMS_QUESTION = "Which film whose director is younger, My Baby'S Daddy or A Tale Of Winter?"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def countrywide_raw():
    return (DATA / "countrywide.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def films_raw():
    return (DATA / "films.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def corpus_records():
    return list(read_corpus(DATA / "corpus20.jsonl"))


@pytest.fixture(scope="session")
def index(corpus_records):
    return build_index(corpus_records)


@pytest.fixture
def countrywide_policy():
    return ScriptedBackend.from_jsonl(DATA / "countrywide_policy.jsonl", family="qwen")


@pytest.fixture
def cooperative_cross():
    return ScriptedBackend.from_jsonl(DATA / "countrywide_cross.jsonl", family="llama")


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    return path
