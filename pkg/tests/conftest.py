import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from codice.data import Feature, FeatureSchema, Preprocessor, load_csv, train_test_split
from codice.model import train_logistic

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
DIABETES_COLUMNS = ["Pregnancies", "Glucose", "BloodPressure", "SkinThickness", "Insulin", "BMI",
                    "DiabetesPedigreeFunction", "Age"]


def diabetes_path() -> Path | None:
    p = Path(os.environ.get("CODICE_DIABETES_CSV", ROOT / "data" / "diabetes.csv"))
    return p if p.exists() else None


@pytest.fixture(scope="session")
def diabetes():
    path = diabetes_path()
    if path is None:
        pytest.skip("data/diabetes.csv missing; run scripts/fetch_diabetes.py")
    schema = FeatureSchema(tuple(Feature(n) for n in DIABETES_COLUMNS))
    return load_csv(path, schema, "Outcome")


@pytest.fixture(scope="session")
def diabetes_setup(diabetes):
    train, test = train_test_split(diabetes, 0.2, 0)
    pre = Preprocessor.fit(train)
    model = train_logistic(pre.transform(train.frame), train.target)
    return train, test, pre, model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
