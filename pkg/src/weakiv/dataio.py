"""CSV ingestion and study configuration files."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError, ParseError
from .inference import METHODS
from .regression import FLAVORS, Dataset, VCovSpec

log = logging.getLogger(__name__)

MISSING = ("", "NA", "NaN", "nan")


def load_dataset(path, roles: Mapping[str, str], extra: Sequence[str] = ()) -> Dataset:
    """Read a CSV into a :class:`Dataset` restricted to the columns in ``roles``.

    ``extra`` names numeric columns carried along without a role; they take
    part in listwise deletion.

    Empty cells (and ``NA``/``NaN``) are missing; rows missing any role
    column are dropped and the count is logged and kept in ``n_dropped``.
    The cluster column may hold arbitrary labels; they are factorized.

    Raises
    ------
    ConfigError
        A referenced column is absent or the header repeats a name.
    ParseError
        A non-missing cell does not parse as a number.  ``row`` is the
        1-based data row (header excluded).
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {path}") from None
    dupes = sorted({c for c in header if header.count(c) > 1})
    if dupes:
        raise ConfigError(f"duplicate header names in {path}: {dupes}")
    wanted = dict(roles)
    wanted.update({c: None for c in extra})
    missing_cols = [c for c in wanted if c not in raw.columns]
    if missing_cols:
        raise ConfigError(f"columns not found in {path}: {missing_cols}")

    raw = raw[list(wanted)].apply(lambda s: s.str.strip())
    is_missing = raw.isin(MISSING)
    numeric = {}
    for col, role in wanted.items():
        if role == "cluster":
            continue
        vals = pd.to_numeric(raw[col].where(~is_missing[col]), errors="coerce")
        bad = vals.isna() & ~is_missing[col]
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(f"cannot parse {raw[col].iloc[i]!r} as a number (row {i + 1}, column {col!r})", row=i + 1, column=col)
        numeric[col] = vals.to_numpy(dtype=float)

    keep = ~is_missing.any(axis=1).to_numpy()
    for v in numeric.values():
        keep &= np.isfinite(v)
    dropped = int((~keep).sum())
    if dropped:
        log.info("listwise deletion dropped %d of %d rows in %s", dropped, len(keep), path)

    cluster_ids = None
    cols = {c: v[keep] for c, v in numeric.items()}
    for col, role in roles.items():
        if role == "cluster":
            codes, _ = pd.factorize(raw[col][keep], sort=True)
            cluster_ids = codes
            cols[col] = codes.astype(float)
    return Dataset(cols, dict(roles), cluster_ids, dropped)


@dataclass
class StudyConfig:
    """One study: data, column roles, variance flavor and requested methods.

    Relative paths are resolved against the directory of the config file.
    """

    data_path: str
    outcome: str
    treatment: str
    instruments: list[str]
    covariates: list[str] = field(default_factory=list)
    cluster: str | None = None
    weight: str | None = None
    zfs_flag: str | None = None
    vcov: str = "hc1"
    alpha: float = 0.05
    boot_reps: int = 1000
    seed: int = 0
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    name: str = "study"
    design: str | None = None  # "experimental" or "observational"
    unreported_f: bool | None = None
    ltz_mu: list[float] | None = None
    ltz_omega: list[list[float]] | None = None
    ltz_from_placebo: bool = False
    json_path: str | None = None
    svg_path: str | None = None
    csv_path: str | None = None
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if isinstance(self.instruments, str):
            self.instruments = [self.instruments]
        self.instruments = list(self.instruments)
        self.covariates = list(self.covariates or [])
        self.methods = list(self.methods)
        if not self.instruments:
            raise ConfigError("config needs at least one instrument")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if self.vcov not in FLAVORS:
            raise ConfigError(f"unknown vcov flavor {self.vcov!r}")
        if "tf" in self.methods and len(self.instruments) != 1:
            raise ConfigError("the tf method needs exactly one instrument")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.design not in (None, "experimental", "observational"):
            raise ConfigError(f"design must be 'experimental' or 'observational', got {self.design!r}")
        if (self.ltz_mu is None) != (self.ltz_omega is None):
            raise ConfigError("ltz_mu and ltz_omega must be given together")
        if self.ltz_from_placebo and not self.zfs_flag:
            raise ConfigError("ltz_from_placebo needs a zfs_flag column")
        self.vcov_spec()

    @classmethod
    def from_dict(cls, d: Mapping, base_dir=".") -> "StudyConfig":
        d = dict(d)
        out = d.pop("output", None) or {}
        for key in ("json", "svg", "csv"):
            if key in out:
                d.setdefault(f"{key}_path", out[key])
        if "data" in d:
            d.setdefault("data_path", d.pop("data"))
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {extra}")
        try:
            return cls(**d, base_dir=str(base_dir))
        except TypeError as exc:
            raise ConfigError(f"invalid study config: {exc}") from None

    @classmethod
    def load(cls, path) -> "StudyConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config not found: {path}") from None
        try:
            d = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path} does not hold a mapping")
        return cls.from_dict(d, base_dir=path.parent)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def roles(self) -> dict[str, str]:
        roles = {self.outcome: "outcome", self.treatment: "treatment"}
        for z in self.instruments:
            roles[z] = "instrument"
        for x in self.covariates:
            roles[x] = "covariate"
        if self.cluster:
            roles[self.cluster] = "cluster"
        if self.weight:
            roles[self.weight] = "weight"
        if len(roles) != 2 + len(self.instruments) + len(self.covariates) + bool(self.cluster) + bool(self.weight):
            raise ConfigError("a column is assigned more than one role")
        return roles

    def vcov_spec(self) -> VCovSpec:
        flavor = self.vcov
        return VCovSpec(flavor, self.cluster, self.boot_reps, self.seed)

    def load_data(self) -> tuple[Dataset, np.ndarray | None]:
        """Dataset plus the boolean zero-first-stage mask (if configured)."""
        roles = self.roles
        if self.zfs_flag in roles:
            raise ConfigError("zfs_flag column also has a model role")
        extra = [self.zfs_flag] if self.zfs_flag else []
        data = load_dataset(self.resolve(self.data_path), roles, extra)
        mask = data[self.zfs_flag] != 0 if self.zfs_flag else None
        return data, mask

    def echo(self) -> dict:
        """Config as recorded in report provenance (no machine-specific paths)."""
        d = asdict(self)
        d.pop("base_dir")
        return d


def load_configs(directory: Sequence | str | Path) -> list[StudyConfig]:
    """Every ``*.json``/``*.yaml``/``*.yml`` study config in a directory, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix in (".json", ".yaml", ".yml"))
    if not paths:
        raise ConfigError(f"no study configs in {directory}")
    return [StudyConfig.load(p) for p in paths]
