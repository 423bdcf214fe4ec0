"""Flat `section.key = value` experiment configuration.

Every key has a typed default below; unknown keys are rejected by name.
The resolved configuration (defaults filled in) is echoed next to the run
outputs so experiments are reproducible from their artifacts alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass


class ConfigError(Exception):
    pass


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip() != ""]


def _float_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip() != ""]


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    # data
    "data.kind": (str, "xor-clean"),   # xor-clean | xor-noisy | mnist | digits | mnist-or-digits
    "data.dir": (str, ""),              # dataset root; falls back to $SPECGUARD_DATA_DIR
    "data.seed": (int, 0),
    "data.points_per_cluster": (int, 50),
    "data.noise_std": (float, 0.2),
    "data.train_size": (int, 10000),
    "data.test_size": (int, 1000),
    "data.train_per_class": (int, 1000),
    "data.test_per_class": (int, 100),
    "data.center": (_bool, False),
    # model
    "model.hidden": (_int_list, [8]),
    "model.activation": (str, "gelu"),
    "model.init_std": (float, -1.0),    # < 0: 1/sqrt(fan_in)
    "model.bias": (_bool, True),
    # train
    "train.epochs": (int, 1000),
    "train.batch_size": (int, 0),       # 0 = full batch
    "train.lr": (float, 1.0),
    "train.momentum": (float, 0.9),
    "train.weight_decay": (float, 0.0),
    "train.track_samples": (_int_list, []),
    # reg
    "reg.mode": (str, "none"),
    "reg.gamma": (float, 0.0),
    "reg.burn_in": (float, 0.7),        # fraction of epochs if < 1, else epoch
    "reg.refresh_period": (int, 1),
    "reg.iters": (int, 1),
    # retrain-readout
    "retrain.l2": (float, 1.0),
    "retrain.fit_intercept": (_bool, True),
    # attack
    "attack.T": (int, 40),
    "attack.init_draws": (int, 200),
    "attack.init_std": (float, -1.0),   # < 0: half the sample value range
    "attack.probes": (int, 100),
    "attack.probe_radius_coef": (float, 1.0),
    "attack.hemisphere_coef": (float, 0.3),
    "attack.bisect_tol": (float, 1e-4),
    "attack.n_samples": (int, 4),
    "attack.thresholds": (_float_list, [0.25, 0.5, 0.75, 1.0, 1.5, 2.0]),
    "attack.split": (str, "test"),      # attack test or train samples
    "attack.checkpoints": (str, ""),    # comma-separated paths (or --checkpoint)
    # geometry
    "geometry.n_samples": (int, 4),
    "geometry.split": (str, "train"),
    "geometry.ball_radius": (float, 0.0),  # 0: skip ball mode
    "geometry.ball_samples": (int, 256),
    "geometry.box": (_float_list, [-1.5, 1.5, -1.5, 1.5]),
    "geometry.resolution": (int, 40),
    # etf
    "etf.classes": (int, 3),
    "etf.dim": (int, 2),
    "etf.init_std": (float, 0.001),
    "etf.lr": (float, 0.01),
    "etf.steps": (int, 5000),
    # run
    "run.seeds": (_int_list, [0]),
    "output.dir": (str, "runs/out"),
}


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def data_dir(self) -> str:
        return self["data.dir"] or os.environ.get("SPECGUARD_DATA_DIR", "")

    def burn_in_epochs(self) -> int:
        b = self["reg.burn_in"]
        return int(round(b * self["train.epochs"])) if b < 1.0 else int(b)

    def echo(self) -> str:
        lines = [f"{k} = {_format_value(self.values[k])}" for k in sorted(SCHEMA)]
        return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {k: v for k, (_, v) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', "
                              f"got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}")
    return ExperimentConfig(values=values)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return parse_config_text(text, source=str(path))


def load_preset(name: str) -> ExperimentConfig:
    from importlib import resources

    ref = resources.files("specguard.presets").joinpath(f"{name}.cfg")
    if not ref.is_file():
        have = sorted(p.name[:-4] for p in resources.files("specguard.presets").iterdir()
                      if p.name.endswith(".cfg"))
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(have)}")
    return parse_config_text(ref.read_text(), source=f"preset:{name}")
