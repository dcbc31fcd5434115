"""A small survey-shaped dataset bundled for demos and pipeline checks.

Rows mimic a household travel survey: mixed binary, count and continuous
covariates, a skewed binary outcome ("frequent car use") and per-row sample
weights. Group ``minority = 0`` is the disadvantaged group; its members have
lower income on average, which is the only route by which group membership
reaches the outcome.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .tabular import Dataset, load_csv, write_csv

__all__ = ["SURVEY_COLUMNS", "generate_survey", "survey_sample_path", "load_survey_sample"]

SAMPLE_FILE = "survey_sample.csv"
SAMPLE_ROWS = 5000
SAMPLE_SEED = 20240

SURVEY_COLUMNS = {
    "label": "frequent_car",
    "protected": "privileged",
    "weight": "survey_weight",
}


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def generate_survey(n: int = SAMPLE_ROWS, seed: int = SAMPLE_SEED) -> Dataset:
    """Draw ``n`` survey-like rows.

    Columns are ``privileged`` (protected, 1 for the privileged group),
    ``income`` (dollars), ``age`` (years), ``female``, ``urban``,
    ``household_size``, ``has_license`` and ``commute_km``. Roughly a quarter
    of the rows have ``frequent_car = 1``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    privileged = (rng.uniform(size=n) < 0.7).astype(np.int64)
    wealth = 1.2 * privileged + rng.standard_normal(n)
    income = np.round(np.exp(10.3 + 0.45 * wealth), 0)
    age = np.round(rng.uniform(18, 80, n), 0)
    female = (rng.uniform(size=n) < 0.5).astype(np.int64)
    urban = (rng.uniform(size=n) < 0.65 - 0.1 * privileged).astype(np.int64)
    household_size = 1 + rng.poisson(1.4, n)
    has_license = (rng.uniform(size=n) < _sigmoid(0.8 + 0.9 * wealth - 0.02 * (age - 45))).astype(np.int64)
    commute_km = np.round(rng.gamma(2.0, 6.0 + 4.0 * (1 - urban)), 1)

    v = (
        -3.8
        + 1.3 * wealth
        + 1.2 * has_license
        - 0.9 * urban
        + 0.25 * (household_size - 2)
        + 0.04 * commute_km
        - 0.2 * female
    )
    y = (rng.uniform(size=n) < _sigmoid(v)).astype(np.int64)
    # design weights: the disadvantaged group is over-sampled, so it is down-weighted
    weight = np.round(np.exp(0.35 * rng.standard_normal(n)) * np.where(privileged == 1, 1.2, 0.8), 4)

    names = ["privileged", "income", "age", "female", "urban", "household_size", "has_license", "commute_km"]
    X = np.column_stack([privileged, income, age, female, urban, household_size, has_license, commute_km]).astype(float)
    return Dataset(
        features=X,
        labels=y,
        protected=privileged,
        weights=weight,
        feature_names=names,
        protected_name="privileged",
        label_name=SURVEY_COLUMNS["label"],
        weight_name=SURVEY_COLUMNS["weight"],
    )


def survey_sample_path():
    """Path of the bundled 5,000-row CSV."""
    return resources.files("fairgap").joinpath("data", SAMPLE_FILE)


def load_survey_sample() -> Dataset:
    path = survey_sample_path()
    with resources.as_file(path) as p:
        return load_csv(p, SURVEY_COLUMNS["label"], SURVEY_COLUMNS["protected"], SURVEY_COLUMNS["weight"])


def write_survey_sample(path, n: int = SAMPLE_ROWS, seed: int = SAMPLE_SEED) -> Dataset:
    ds = generate_survey(n, seed)
    write_csv(ds, path)
    return ds
