"""INI run configuration: one section per stage, command-line flags win."""

from __future__ import annotations

import configparser
import copy
from pathlib import Path
from typing import Any, Optional

DEFAULT_SEED = 0

DEFAULTS: dict[str, dict[str, Any]] = {
    "corpus": {"n_reports": 541, "misparse_rate": 0.0, "biopsy_positive_rate": 0.266,
               "seed": DEFAULT_SEED},
    "tokenizer": {"vocab_size": 600, "max_len": 128},
    "encoder": {"n_layers": 4, "d_model": 64, "n_heads": 4, "d_ff": 256, "dropout": 0.1},
    "pretrain": {"epochs": 20, "batch_size": 16, "lr": 1e-3, "train_fraction": 0.85,
                 "seed": DEFAULT_SEED},
    # decay / temperature / smoothing fall back to the task presets when unset
    "finetune": {"base_lr": 1e-4, "batch_size": 8, "epochs": 70, "seed": DEFAULT_SEED,
                 "selection_metric": "accuracy", "decay": None, "temperature": None,
                 "smoothing": None},
    "evaluate": {"k": 5, "seed": DEFAULT_SEED, "jobs": 1},
}


def _coerce(value: str, like: Any):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float) or like is None:
        try:
            return float(value)
        except ValueError:
            return value
    return value


def load_config(path: Optional[str] = None) -> dict[str, dict[str, Any]]:
    """Defaults overlaid with the INI file at ``path`` (if any).

    Unknown sections or keys are an error so typos do not pass silently.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    if not parser.read(Path(path), encoding="utf-8"):
        raise FileNotFoundError(path)
    for section in parser.sections():
        if section not in cfg:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in cfg[section]:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            cfg[section][key] = _coerce(raw, DEFAULTS[section][key])
    return cfg


def override(cfg: dict, section: str, **values) -> None:
    """Apply non-None flag values onto ``cfg[section]``."""
    for k, v in values.items():
        if v is not None:
            cfg[section][k] = v


def dump_config(cfg: dict) -> str:
    parser = configparser.ConfigParser()
    for section, values in cfg.items():
        parser[section] = {k: "" if v is None else str(v) for k, v in values.items()}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
    return "\n".join(lines)
