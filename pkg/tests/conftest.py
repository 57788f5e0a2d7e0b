from pathlib import Path

import pytest

from sotkit.scene_graph import load_questions, load_scene_graphs

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def graphs():
    return load_scene_graphs(DATA / "scene_graphs.json")


@pytest.fixture(scope="session")
def questions():
    return load_questions(DATA / "questions.json")


@pytest.fixture(scope="session")
def by_id(questions):
    return {q.question_id: q for q in questions}


@pytest.fixture(scope="session")
def picnic(graphs):
    return graphs["498202"]


@pytest.fixture(scope="session")
def garland_scene(graphs):
    return graphs["713013"]


@pytest.fixture(scope="session")
def mini_graphs():
    return load_scene_graphs(DATA / "mini_scene_graphs.json")


@pytest.fixture(scope="session")
def mini_questions():
    return load_questions(DATA / "mini_questions.json")
