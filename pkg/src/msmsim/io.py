"""File formats: person-period CSV, summary CSV, fit tables and run manifests.

All CSVs are written with 17 significant digits so that a fixed seed gives
byte-identical files.
"""

from __future__ import annotations

import json
import platform
import re
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .engine import Cohort
from .errors import SchemaMismatchError
from .estimation import PersonPeriodTable, table_from_frame
from .scenario import ScenarioSpec

FLOAT_FORMAT = "%.17g"
PERSON_PERIOD_VERSION = 1
SUMMARY_COLUMNS = ["id", "event_time", "event", "censor_reason"]
_ROLE_RE = {"x": re.compile(r"^x\d+$"), "b": re.compile(r"^b\d+$"), "l": re.compile(r"^l\d+$")}


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # pragma: no cover - not installed
        return "0.0.0"


def write_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def person_period_frame(table: PersonPeriodTable, spec: ScenarioSpec | None = None,
                        blind: bool = False) -> pd.DataFrame:
    """Person-period rows in the documented column order.

    With ``blind`` the baseline variables marked unobserved in ``spec`` are
    dropped, leaving what an analyst would see.
    """
    b_names = list(table.b_names)
    if blind:
        hidden = {c.name for c in spec.baseline_b if not c.observed} if spec is not None else set()
        b_names = [b for b in b_names if b not in hidden]
    cols = (["id", "k", "y"] + list(table.x_names) + b_names + list(table.l_names)
            + ["a", "weight", "t_event", "censored"])
    return table.frame[cols]


def write_person_period(table: PersonPeriodTable, path, spec: ScenarioSpec | None = None,
                        blind: bool = False) -> None:
    write_csv(person_period_frame(table, spec, blind), path)


def infer_roles(columns: Sequence[str]) -> dict:
    """Split covariate columns into ``x``, ``b`` and ``l`` by name (``x1``, ``b2``, ``l1``, ...)."""
    roles = {r: [c for c in columns if rx.match(c)] for r, rx in _ROLE_RE.items()}
    return roles


def read_person_period(path, spec: ScenarioSpec | None = None, terms: Sequence[str] = (),
                       visit_intercepts: str = "per-visit") -> PersonPeriodTable:
    """Read a person-period CSV.

    Covariate roles come from ``spec`` when given, otherwise from the column
    names (``x<j>``, ``b<j>``, ``l<j>``).

    Raises
    ------
    SchemaMismatchError
        Required columns are missing; the message lists what was found.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    need = ["id", "k", "y", "a"]
    missing = [c for c in need if c not in frame.columns]
    if missing:
        raise SchemaMismatchError(f"{path}: missing columns {missing}; found {list(frame.columns)}")
    if spec is not None:
        x, b, l = spec.x_names, [c for c in spec.b_names if c in frame.columns], spec.l_names
        K = spec.K
    else:
        roles = infer_roles(frame.columns)
        x, b, l = roles["x"], roles["b"], roles["l"]
        K = None
    return table_from_frame(frame, x, b, l, K, terms, visit_intercepts)


def write_summary(cohort: Cohort, path) -> None:
    write_csv(cohort.summary_frame()[SUMMARY_COLUMNS], path)


@dataclass
class RunManifest:
    """Everything needed to reproduce an output directory.

    Two runs with identical manifests (ignoring ``timing`` and ``workers``)
    produce byte-identical output files.
    """

    command: str
    tool_version: str
    scenario_digest: str
    root_seed: int
    workers: int
    arguments: dict
    outputs: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    scenario: dict | None = None
    python: str = field(default_factory=platform.python_version)
    numpy: str = field(default_factory=lambda: np.__version__)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=str)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def new_manifest(command: str, spec: ScenarioSpec | None, seed: int, workers: int, arguments: dict) -> RunManifest:
    return RunManifest(command=command, tool_version=_version(),
                       scenario_digest=spec.digest() if spec is not None else "",
                       root_seed=int(seed), workers=int(workers), arguments=arguments,
                       scenario=spec.to_dict() if spec is not None else None,
                       timing={"started": time.strftime("%Y-%m-%dT%H:%M:%S")})
