"""Dataset directories and experiment config files.

A dataset directory holds::

    meta            TOML key/values: every SystemConfig field, noise_power,
                    and assumed_noise_power when knowledge.csv is present
    pilots.csv      L rows, 2N columns (re, im interleaved per user)
    Y_<k>.csv       one per AP, k from 0; L rows, 2M columns
    truth.csv       user,active,beta_0..beta_{K-1} (effective gains)
    knowledge.csv   optional, same layout as truth.csv; the gains a
                    knowledge-dependent detector is told
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evalharness import ExperimentSpec
from .simkit import Perturbation, PilotMatrix, ReceivedSignals, SystemConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "Dataset",
    "write_dataset",
    "read_dataset",
    "load_config",
    "parse_config",
    "SweepSetting",
]


class ConfigError(ValueError):
    pass


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot write {type(value).__name__} to TOML")


def _write_meta(path: Path, values: dict) -> None:
    lines = [f"{key} = {_toml_value(val)}" for key, val in values.items()]
    path.write_text("\n".join(lines) + "\n")


def _interleave(z: np.ndarray) -> np.ndarray:
    out = np.empty((z.shape[0], 2 * z.shape[1]))
    out[:, 0::2] = z.real
    out[:, 1::2] = z.imag
    return out


def _deinterleave(a: np.ndarray) -> np.ndarray:
    if a.shape[1] % 2:
        raise ValueError("complex CSV needs an even number of columns")
    return a[:, 0::2] + 1j * a[:, 1::2]


def _save_matrix(path: Path, a: np.ndarray) -> None:
    np.savetxt(path, a, delimiter=",", fmt="%.17g")


def _load_matrix(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float, ndmin=2))


def _save_gains(path: Path, activity, beta) -> None:
    K = beta.shape[0]
    header = ",".join(["user", "active"] + [f"beta_{k}" for k in range(K)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for n in range(beta.shape[1]):
            row = [str(n), str(int(activity[n]))] + [repr(float(b)) for b in beta[:, n]]
            fh.write(",".join(row) + "\n")


def _load_gains(path: Path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:2] != ["user", "active"]:
        raise ValueError(f"{path}: expected a user,active,beta_... header")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0])
    data = data[order]
    return data[:, 1].astype(np.int8), data[:, 2:].T.copy()


@dataclass
class Dataset:
    config: SystemConfig
    pilots: PilotMatrix
    signals: ReceivedSignals
    activity: np.ndarray
    beta: np.ndarray
    noise_power: float
    assumed_beta: np.ndarray | None = None
    assumed_noise_power: float | None = None


def write_dataset(directory, config: SystemConfig, pilots: PilotMatrix, signals: ReceivedSignals,
                  activity, beta, assumed_beta=None, assumed_noise_power=None) -> Path:
    """Write one realization in the text layout described in the module docstring."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = dataclasses.asdict(config)
    meta["noise_power"] = float(signals.noise_power)
    if assumed_beta is not None:
        meta["assumed_noise_power"] = float(
            signals.noise_power if assumed_noise_power is None else assumed_noise_power)
    _write_meta(out / "meta", meta)
    _save_matrix(out / "pilots.csv", _interleave(pilots.s))
    for k in range(signals.K):
        _save_matrix(out / f"Y_{k}.csv", _interleave(signals.y[k]))
    _save_gains(out / "truth.csv", np.asarray(activity), np.asarray(beta, dtype=float))
    if assumed_beta is not None:
        _save_gains(out / "knowledge.csv", np.asarray(activity), np.asarray(assumed_beta, dtype=float))
    return out


def read_dataset(directory) -> Dataset:
    src = Path(directory)
    if not src.is_dir():
        raise FileNotFoundError(f"dataset directory {src} does not exist")
    with open(src / "meta", "rb") as fh:
        meta = tomllib.load(fh)
    noise_power = float(meta.pop("noise_power", 1.0))
    assumed_noise = meta.pop("assumed_noise_power", None)
    fields = {f.name for f in dataclasses.fields(SystemConfig)}
    unknown = set(meta) - fields
    if unknown:
        raise ValueError(f"{src / 'meta'}: unknown keys {sorted(unknown)}")
    config = SystemConfig(**meta)
    pilots = PilotMatrix(_deinterleave(_load_matrix(src / "pilots.csv")))
    y = np.stack([_deinterleave(_load_matrix(src / f"Y_{k}.csv")) for k in range(config.K)])
    signals = ReceivedSignals(y=y, noise_power=noise_power)
    activity, beta = _load_gains(src / "truth.csv")
    assumed_beta = None
    if (src / "knowledge.csv").exists():
        _, assumed_beta = _load_gains(src / "knowledge.csv")
    if pilots.s.shape != (config.L, config.N) or y.shape != (config.K, config.L, config.M):
        raise ValueError(f"{src}: array shapes disagree with meta")
    return Dataset(config, pilots, signals, activity, beta, noise_power, assumed_beta,
                   None if assumed_noise is None else float(assumed_noise))


@dataclass(frozen=True)
class SweepSetting:
    field: str
    values: tuple


_ALGO_KEYS = {"name", "rel_tol", "max_iters"}
_RUN_KEYS = {"trials", "threshold_count", "master_seed", "workers"}


def _check_keys(section: str, table: dict, allowed) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = set(table) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys {sorted(unknown)}")


def parse_config(doc: dict):
    """Turn a parsed TOML document into ``(ExperimentSpec, SweepSetting | None)``."""
    _check_keys("top level", doc, {"system", "algorithm", "perturbation", "run", "sweep"})
    system_tab = doc.get("system", {})
    _check_keys("system", system_tab, {f.name for f in dataclasses.fields(SystemConfig)})
    pert_tab = dict(doc.get("perturbation", {}))
    _check_keys("perturbation", pert_tab, {f.name for f in dataclasses.fields(Perturbation)})
    algo_tab = doc.get("algorithm", {})
    _check_keys("algorithm", algo_tab, _ALGO_KEYS)
    run_tab = doc.get("run", {})
    _check_keys("run", run_tab, _RUN_KEYS)
    try:
        system = SystemConfig(**system_tab)
        if "epsilon_range" in pert_tab:
            pert_tab["epsilon_range"] = tuple(float(v) for v in pert_tab["epsilon_range"])
        perturbation = Perturbation(**pert_tab)
        spec = ExperimentSpec(
            system=system,
            algorithm=algo_tab.get("name", "ghvi"),
            trials=int(run_tab.get("trials", 300)),
            threshold_count=run_tab.get("threshold_count", 201),
            perturbation=perturbation,
            master_seed=int(run_tab.get("master_seed", system.seed)),
            rel_tol=algo_tab.get("rel_tol"),
            max_iters=algo_tab.get("max_iters"),
            workers=int(run_tab.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    sweep = None
    if "sweep" in doc:
        tab = doc["sweep"]
        _check_keys("sweep", tab, {"field", "values"})
        if "field" not in tab or not tab.get("values"):
            raise ConfigError("[sweep] needs a field and a non-empty values list")
        sweep = SweepSetting(str(tab["field"]), tuple(tab["values"]))
    return spec, sweep


def load_config(path):
    """Read a TOML experiment config; see :func:`parse_config`."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)

