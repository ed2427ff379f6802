"""Dataset ingestion recipes.

A recipe turns a raw CSV into a clean table with a binary protected column
and a binary label, plus the matching :class:`TableSchema`.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from .tabular import TableSchema

log = logging.getLogger(__name__)


class RecipeError(ValueError):
    pass


@dataclass(frozen=True)
class RecipeDefaults:
    """Per-dataset training and repair settings."""

    t1: int
    t2: int
    lambda_f: float
    crdi_lambda: float


@dataclass(frozen=True)
class DatasetRecipe:
    name: str
    required: tuple[str, ...]
    protected: str
    underprivileged: Any
    label: str
    favorable: Any
    prepare: Callable[[pd.DataFrame], pd.DataFrame]
    defaults: RecipeDefaults
    categorical: tuple[str, ...] = ()
    bundled: str | None = None

    def read(self, path: str | Path | None = None) -> pd.DataFrame:
        if path is None:
            if self.bundled is None:
                raise RecipeError(f"recipe {self.name!r} has no bundled data; pass a CSV path")
            with resources.as_file(resources.files("fairtab") / "data" / self.bundled) as p:
                return _read_csv(p)
        path = Path(path)
        if not path.exists():
            raise RecipeError(f"{path}: no such file")
        return _read_csv(path)

    def ingest(self, path: str | Path | None = None) -> tuple[pd.DataFrame, TableSchema]:
        raw = self.read(path)
        raw.columns = [str(c).strip() for c in raw.columns]
        missing = [c for c in self.required if c not in raw.columns]
        if missing:
            raise RecipeError(f"recipe {self.name!r}: input is missing required columns {missing}")
        raw = raw.apply(lambda s: s.str.strip() if s.dtype == object else s)
        table = self.prepare(raw)
        before = len(table)
        table = table.dropna().reset_index(drop=True)
        if before != len(table):
            log.info("%s: dropped %d rows with missing values", self.name, before - len(table))
        for col in (self.protected, self.label):
            values = set(pd.unique(table[col]))
            if len(values) != 2:
                raise RecipeError(f"recipe {self.name!r}: column {col!r} is not binary after preprocessing: {sorted(map(str, values))}")
        log.info("%s: %d rows, %d columns", self.name, len(table), table.shape[1])
        schema = TableSchema.infer(
            table,
            categorical=self.categorical,
            protected=self.protected,
            underprivileged=self.underprivileged,
            label=self.label,
            favorable=self.favorable,
        )
        return table, schema


def _read_csv(path: Path) -> pd.DataFrame:
    # bank-full ships ';'-separated; everything else uses commas
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        header = fh.readline()
    sep = ";" if header.count(";") > header.count(",") else ","
    return pd.read_csv(path, sep=sep, skipinitialspace=True)


def _prepare_adult(raw: pd.DataFrame) -> pd.DataFrame:
    t = raw.copy()
    t["income"] = t["income"].str.rstrip(".")
    return t


BANK_AGE_CUTOFF = 25


def _prepare_bank(raw: pd.DataFrame) -> pd.DataFrame:
    t = raw.copy()
    age = pd.to_numeric(t["age"], errors="coerce")
    t["age"] = np.where(age <= BANK_AGE_CUTOFF, "younger", "older")
    t.loc[age.isna(), "age"] = np.nan
    return t


COMPAS_DROP = (
    "Person_ID",
    "AssessmentID",
    "Case_ID",
    "ScaleSet_ID",
    "Scale_ID",
    "LastName",
    "FirstName",
    "MiddleName",
    "DateOfBirth",
    "Screening_Date",
)
COMPAS_HIGH_DECILE = 5


def _prepare_compas(raw: pd.DataFrame) -> pd.DataFrame:
    t = raw.copy()
    if "DisplayText" in t.columns:
        t = t[t["DisplayText"] == "Risk of Recidivism"].drop(columns="DisplayText")
    race = t["Ethnic_Code_Text"].replace({"African-Am": "African-American"})
    t = t.assign(Ethnic_Code_Text=race)
    t = t[race.isin(["African-American", "Caucasian"])]
    decile = pd.to_numeric(t["DecileScore"], errors="coerce")
    risk = np.where(decile >= COMPAS_HIGH_DECILE, "High_Chance", "Low_Chance").astype(object)
    risk[decile.isna().to_numpy()] = np.nan
    t = t.drop(columns=[c for c in COMPAS_DROP if c in t.columns] + ["DecileScore"])
    t["risk"] = risk
    return t.reset_index(drop=True)


def _prepare_law(raw: pd.DataFrame) -> pd.DataFrame:
    t = raw.drop(columns=[c for c in raw.columns if c == "" or c.startswith("Unnamed")])
    t = t[t["race"].isin(["Black", "White"])].copy()
    fya = pd.to_numeric(t["ZFYA"], errors="coerce")
    grade = np.where(fya > 0, "High", "Low").astype(object)
    grade[fya.isna().to_numpy()] = np.nan
    t = t.drop(columns="ZFYA")
    t["fya"] = grade
    return t.reset_index(drop=True)


RECIPES: dict[str, DatasetRecipe] = {
    "adult": DatasetRecipe(
        name="adult",
        required=("sex", "income"),
        protected="sex",
        underprivileged="Female",
        label="income",
        favorable=">50K",
        prepare=_prepare_adult,
        defaults=RecipeDefaults(170, 30, 0.5, 0.999),
        bundled="adult.csv.gz",  # '?' stays a category of its own
    ),
    "bank": DatasetRecipe(
        name="bank",
        required=("age", "y"),
        protected="age",
        underprivileged="younger",
        label="y",
        favorable="yes",
        prepare=_prepare_bank,
        defaults=RecipeDefaults(195, 5, 0.75, 0.9),
    ),
    "compas": DatasetRecipe(
        name="compas",
        required=("Ethnic_Code_Text", "DecileScore"),
        protected="Ethnic_Code_Text",
        underprivileged="African-American",
        label="risk",
        favorable="Low_Chance",
        prepare=_prepare_compas,
        defaults=RecipeDefaults(40, 30, 2.2, 0.999),
        categorical=("RecSupervisionLevel",),
    ),
    "law": DatasetRecipe(
        name="law",
        required=("race", "ZFYA"),
        protected="race",
        underprivileged="Black",
        label="fya",
        favorable="High",
        prepare=_prepare_law,
        defaults=RecipeDefaults(180, 20, 2.5, 0.999),
        categorical=("region_first", "sex"),
    ),
}


def get_recipe(name: str) -> DatasetRecipe:
    try:
        return RECIPES[name]
    except KeyError:
        raise RecipeError(f"unknown recipe {name!r}; choose from {sorted(RECIPES)}") from None
