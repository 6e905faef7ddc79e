"""Shared JSON configuration with one section per module.

Example::

    {"encoder": {"sigma_kp": 9, "stride": 4},
     "loss": {"alpha": 0.1, "beta": 0.02},
     "decoder": {"min_peak_score": 0.1},
     "oks": {"max_detections": 20},
     "synth": {"persons": [1, 4], "constraints": {"snap": false}, "noise": {"jitter": 0.0}}}

Missing sections and keys fall back to defaults; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .decoder import DecodeConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .loss import LossConfig
from .oks import OksConfig
from .synth import NoiseSpec, SceneConstraints


def _build(cls, doc):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"section for {cls.__name__} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class SynthConfig:
    persons: tuple = (1, 4)
    constraints: SceneConstraints = field(default_factory=SceneConstraints)
    noise: NoiseSpec = field(default_factory=NoiseSpec)


@dataclass(frozen=True)
class Config:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    decoder: DecodeConfig = field(default_factory=DecodeConfig)
    oks: OksConfig = field(default_factory=OksConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def canvas(self) -> tuple[int, int]:
        return int(self.encoder.width * self.encoder.stride), int(self.encoder.height * self.encoder.stride)


def config_from_dict(doc: dict | None) -> Config:
    doc = doc or {}
    unknown = set(doc) - {"encoder", "loss", "decoder", "oks", "synth"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    synth = dict(doc.get("synth") or {})
    extra = set(synth) - {"persons", "constraints", "noise"}
    if extra:
        raise ConfigError(f"unknown synth keys: {sorted(extra)}")
    persons = tuple(synth.get("persons", (1, 4)))
    if len(persons) != 2 or persons[0] < 0 or persons[1] < persons[0]:
        raise ConfigError("synth.persons must be [min, max] with 0 <= min <= max")
    return Config(
        encoder=_build(EncoderConfig, doc.get("encoder")),
        loss=_build(LossConfig, doc.get("loss")),
        decoder=_build(DecodeConfig, doc.get("decoder")),
        oks=_build(OksConfig, doc.get("oks")),
        synth=SynthConfig(
            persons=persons,
            constraints=_build(SceneConstraints, synth.get("constraints")),
            noise=_build(NoiseSpec, synth.get("noise")),
        ),
    )


def load_config(path) -> Config:
    if path is None:
        return Config()
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
