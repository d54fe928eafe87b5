"""Build the bundled German Credit and COMPAS CSVs from their raw sources.

German Credit: the UCI Statlog ``german.data`` file (space separated, no header).
COMPAS: ProPublica's ``compas-scores-two-years.csv``.

Usage::

    python scripts/prepare_datasets.py --german german.data \
        --compas compas-scores-two-years.csv --out src/faircompose/datasets
"""
import argparse
from pathlib import Path

import pandas as pd

GERMAN_COLUMNS = [
    "checking_status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "installment_rate", "personal_status", "other_debtors",
    "residence_since", "property", "age", "other_installment_plans", "housing",
    "existing_credits", "job", "num_dependents", "telephone", "foreign_worker",
    "credit_risk",
]
GERMAN_KEEP = [
    "checking_status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "housing", "job",
]
# A91/A93/A94 are male codes, A92/A95 female.
SEX_CODES = {"A91": "male", "A92": "female", "A93": "male", "A94": "male", "A95": "female"}

COMPAS_KEEP = [
    "sex", "race", "age", "priors_count", "c_charge_degree", "juv_fel_count",
    "juv_misd_count", "two_year_recid",
]


def prepare_german(path):
    raw = pd.read_csv(path, sep=r"\s+", header=None, names=GERMAN_COLUMNS)
    out = raw[GERMAN_KEEP].copy()
    out["sex"] = raw["personal_status"].map(SEX_CODES)
    out["age_group"] = (raw["age"] >= 25).map({True: "25+", False: "<25"})
    # 1 = good credit risk, 2 = bad
    out["credit_risk"] = raw["credit_risk"]
    return out


def prepare_compas(path):
    raw = pd.read_csv(path)
    keep = (
        raw.days_b_screening_arrest.between(-30, 30)
        & (raw.is_recid != -1)
        & (raw.c_charge_degree != "O")
        & (raw.score_text != "N/A")
        & raw.race.isin(["African-American", "Caucasian"])
    )
    return raw.loc[keep, COMPAS_KEEP].reset_index(drop=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--german", type=Path, required=True)
    parser.add_argument("--compas", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    prepare_german(args.german).to_csv(args.out / "german_credit.csv", index=False)
    prepare_compas(args.compas).to_csv(args.out / "compas.csv", index=False)


if __name__ == "__main__":
    main()
