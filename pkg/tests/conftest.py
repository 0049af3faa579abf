from fractions import Fraction

import numpy as np
import pytest

from weakiv import IVModel

# six-row fixture with hand-derivable estimates
FIXA = {
    "z": [0, 0, 0, 1, 1, 1],
    "d": [1, 0, 1, 2, 1, 3],
    "y": [2, 1, 2, 5, 3, 7],
}


def fixa_model() -> IVModel:
    return IVModel(y=FIXA["y"], d=FIXA["d"], Z=FIXA["z"])


@pytest.fixture
def fixa():
    return fixa_model()


@pytest.fixture
def fixa_csv(tmp_path):
    path = tmp_path / "fixa.csv"
    rows = ["y,d,z"] + [f"{y},{d},{z}" for y, d, z in zip(FIXA["y"], FIXA["d"], FIXA["z"])]
    path.write_text("\n".join(rows) + "\n")
    return path


def rational_fixa():
    """Exact estimates from group means and centred cross products."""
    z, d, y = (list(map(Fraction, FIXA[k])) for k in ("z", "d", "y"))
    n = len(z)
    mean = lambda v: sum(v) / n  # noqa: E731
    cov = lambda a, b: sum((ai - mean(a)) * (bi - mean(b)) for ai, bi in zip(a, b))  # noqa: E731
    return {
        "tau_2sls": cov(y, z) / cov(d, z),
        "tau_ols": cov(y, d) / cov(d, d),
        "pi": cov(d, z) / cov(z, z),
        "gamma": cov(y, z) / cov(z, z),
    }


def random_design(rng, n=40, p_z=1, k_x=0, pi=0.8, rho=0.5, hetero=False, clusters=None):
    """Small linear IV dataset; returns an IVModel."""
    Z = rng.standard_normal((n, p_z))
    X = rng.standard_normal((n, k_x)) if k_x else None
    e = rng.standard_normal(n)
    v = rho * e + np.sqrt(1 - rho**2) * rng.standard_normal(n)
    if hetero:
        e = e * (0.5 + np.abs(Z[:, 0]))
    d = Z @ np.full(p_z, pi) + v
    if X is not None:
        d = d + X @ rng.standard_normal(k_x)
    y = 1.5 * d + e
    if X is not None:
        y = y + X @ rng.standard_normal(k_x)
    cl = None if clusters is None else rng.integers(0, clusters, size=n)
    return IVModel(y, d, Z, X, clusters=cl)


def ar_design(seed, n, p_z, pi, direct, rho=0.8):
    """Design with endogeneity ``rho`` and optional direct instrument effects."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p_z))
    e = rng.standard_normal(n)
    d = Z @ np.full(p_z, pi) + rho * e + np.sqrt(1 - rho**2) * rng.standard_normal(n)
    y = d + Z @ np.asarray(direct, float) + e
    return IVModel(y, d, Z)


# (seed, n, p_z, pi, direct effects) -> kind of the 95% AR set
AR_CASES = [
    ((0, 40, 1, 1.0, [0]), "bounded"),
    ((1, 40, 1, 1.0, [0]), "bounded"),
    ((4, 40, 1, 0.15, [0]), "bounded"),
    ((0, 40, 1, 0.0, [0]), "whole_line"),
    ((2, 40, 1, 0.0, [0]), "whole_line"),
    ((1, 40, 1, 0.15, [0]), "whole_line"),
    ((0, 40, 1, 0.15, [0]), "disconnected"),
    ((2, 40, 1, 0.15, [0]), "disconnected"),
    ((0, 40, 1, 0.1, [0.5]), "disconnected"),
    ((1, 40, 1, 0.1, [0.5]), "disconnected"),
    ((0, 60, 2, 1.0, [1.5, -1.5]), "empty"),
    ((1, 60, 2, 1.0, [1.5, -1.5]), "empty"),
    ((2, 60, 2, 1.0, [1.5, -1.5]), "empty"),
    ((0, 40, 2, 0.1, [0, 0]), "whole_line"),
    ((7, 40, 2, 0.1, [0, 0]), "whole_line"),
    ((1, 40, 2, 0.1, [0, 0]), "bounded"),
    ((2, 40, 2, 0.1, [0, 0]), "bounded"),
    ((3, 40, 2, 0.1, [0, 0]), "disconnected"),
    ((4, 40, 2, 0.1, [0, 0]), "disconnected"),
    ((6, 40, 2, 0.1, [0, 0]), "disconnected"),
]


def grid_set(stat, crit, lo, hi, n_points=100_001):
    """Accepted runs of a dense grid; runs touching an edge extend to infinity.

    Returns ``(intervals, step)`` with grid-resolution endpoints.
    """
    grid = np.linspace(lo, hi, n_points)
    acc = stat(grid) <= crit
    out, i = [], 0
    while i < n_points:
        if not acc[i]:
            i += 1
            continue
        j = i
        while j + 1 < n_points and acc[j + 1]:
            j += 1
        out.append((-np.inf if i == 0 else grid[i], np.inf if j == n_points - 1 else grid[j]))
        i = j + 1
    return out, grid[1] - grid[0]


def write_study(directory, name, columns, **config):
    """Write ``columns`` to ``<name>.csv`` and a JSON config next to it."""
    import json
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    keys = list(columns)
    lines = [",".join(keys)] + [",".join(str(v) for v in row) for row in zip(*(columns[k] for k in keys))]
    (directory / f"{name}.csv").write_text("\n".join(lines) + "\n")
    cfg = {"data": f"{name}.csv", "outcome": "y", "treatment": "d", "instruments": ["z"], "name": name}
    cfg.update(config)
    path = directory / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path


def design_columns(seed, n=200, pi=0.5, rho=0.5, clusters=None):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    e = rng.standard_normal(n)
    d = pi * z + rho * e + np.sqrt(1 - rho**2) * rng.standard_normal(n)
    y = d + e
    cols = {"y": np.round(y, 10), "d": np.round(d, 10), "z": np.round(z, 10)}
    if clusters:
        cols["g"] = rng.integers(0, clusters, n)
    return cols
