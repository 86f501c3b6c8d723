"""Experiment configuration: INI sections validated by pydantic, plus run manifests.

Missing keys take the defaults below on input; ``to_ini`` always writes every
key so a saved file never relies on them.
"""

import configparser
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union, get_args, get_origin

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from oclb import __version__
from oclb.errors import UsageError
from oclb.seeding import PRNG_IDENTITY, SPLIT_RULE

logger = logging.getLogger(__name__)

MANIFEST_SECTION = "manifest"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ExperimentSection(_Section):
    name: str = "oclb"
    root_seed: int = Field(default=0, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    output: str = "results"


class InstanceSection(_Section):
    family: Literal["chain", "signflip", "block", "flattened"] = "chain"
    mu: float = Field(default=9.0, gt=0)
    lam: float = Field(default=1.0, gt=0, alias="lambda")
    n: int = Field(default=4, ge=1)
    d: int = Field(default=20, ge=1)
    epsilon: float = Field(default=1e-6, gt=0, lt=1)
    T: int = Field(default=8, ge=2)


class BoundsSection(_Section):
    c: float = Field(default=1.0, gt=0)
    c_prime: float = Field(default=1.0, gt=0)


class GDSection(_Section):
    passes: int = Field(default=40, ge=1)
    step_size: Optional[float] = Field(default=None, gt=0)


class AGDSection(_Section):
    passes: int = Field(default=40, ge=1)


class NewtonSection(_Section):
    sentinel_tolerance: float = Field(default=1e-10, gt=0)


class SubsampledNewtonSection(_Section):
    sample_size: int = Field(default=2, ge=1)
    steps: int = Field(default=20, ge=1)
    regularizer: Optional[float] = Field(default=None, ge=0)
    step_size: Optional[float] = Field(default=None, gt=0)
    rank: Optional[int] = Field(default=None, ge=1)


class SVRGSection(_Section):
    epochs: int = Field(default=10, ge=1)
    inner_steps: Optional[int] = Field(default=None, ge=1)
    step_size: Optional[float] = Field(default=None, gt=0)


class LissaSection(_Section):
    outer_steps: int = Field(default=20, ge=1)
    neumann_depth: int = Field(default=4, ge=0)
    step_size: Optional[float] = Field(default=None, gt=0)


class RaceSection(_Section):
    optimizers: List[str] = Field(
        default_factory=lambda: ["gd", "agd", "subsampled_newton", "svrg", "lissa", "newton_full"]
    )
    ratios: List[float] = Field(default_factory=lambda: [9.0, 100.0])
    n_values: List[int] = Field(default_factory=lambda: [4, 16])
    d: int = Field(default=50, ge=2)


class SpanSection(_Section):
    n_values: List[int] = Field(default_factory=lambda: [2, 4, 8])
    d: int = Field(default=40, ge=2)
    t_max: int = Field(default=200, ge=1)
    schedules: List[str] = Field(default_factory=lambda: ["round-robin", "uniform"])
    trials: int = Field(default=10_000, ge=1)
    sigmas: float = Field(default=4.0, gt=0)


class ResistSection(_Section):
    mu: float = Field(default=32.0, gt=0)
    lam: float = Field(default=1.0, gt=0, alias="lambda")
    t_values: List[int] = Field(default_factory=lambda: [4, 8, 16])
    callbacks: List[str] = Field(default_factory=lambda: ["gd", "nesterov", "damped_newton"])
    damping: float = Field(default=0.5, gt=0)


class BlockSection(_Section):
    mu: float = Field(default=9.0, gt=0)
    lam: float = Field(default=1.0, gt=0, alias="lambda")
    n: int = Field(default=2, ge=1)
    d: int = Field(default=3, ge=2)
    t_max: int = Field(default=6, ge=1)
    optimizers: List[str] = Field(default_factory=lambda: ["gd", "agd", "subsampled_newton", "svrg", "lissa"])


class ExperimentConfig(_Section):
    """Every section of an experiment file."""

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    instance: InstanceSection = Field(default_factory=InstanceSection)
    bounds: BoundsSection = Field(default_factory=BoundsSection)
    gd: GDSection = Field(default_factory=GDSection)
    agd: AGDSection = Field(default_factory=AGDSection)
    newton: NewtonSection = Field(default_factory=NewtonSection)
    subsampled_newton: SubsampledNewtonSection = Field(default_factory=SubsampledNewtonSection)
    svrg: SVRGSection = Field(default_factory=SVRGSection)
    lissa: LissaSection = Field(default_factory=LissaSection)
    race: RaceSection = Field(default_factory=RaceSection)
    span: SpanSection = Field(default_factory=SpanSection)
    resist: ResistSection = Field(default_factory=ResistSection)
    block: BlockSection = Field(default_factory=BlockSection)


def _is_list(annotation) -> bool:
    return get_origin(annotation) in (list, List)


def _is_optional(annotation) -> bool:
    return get_origin(annotation) is Union and type(None) in get_args(annotation)


def _parse_section(model: type, raw: Dict[str, str]) -> Dict[str, object]:
    by_key = {(info.alias or name): info for name, info in model.model_fields.items()}
    parsed: Dict[str, object] = {}
    for key, value in raw.items():
        info = by_key.get(key)
        if info is None:
            parsed[key] = value  # rejected by extra="forbid"
        elif _is_list(info.annotation):
            parsed[key] = [item.strip() for item in value.split(",") if item.strip()]
        elif _is_optional(info.annotation) and value.strip() == "":
            parsed[key] = None
        else:
            parsed[key] = value.strip()
    return parsed


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_render(v) for v in value)
    return str(value)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse INI text; a ``[manifest]`` section is accepted and ignored."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise UsageError(f"{source}: {e}") from e

    sections: Dict[str, Dict[str, object]] = {}
    for name in parser.sections():
        if name == MANIFEST_SECTION:
            continue
        if name not in ExperimentConfig.model_fields:
            raise UsageError(f"{source}: unknown section [{name}]. Available: {list(ExperimentConfig.model_fields)}")
        model = ExperimentConfig.model_fields[name].annotation
        sections[name] = _parse_section(model, dict(parser.items(name)))
    try:
        return ExperimentConfig.model_validate(sections)
    except ValidationError as e:
        raise UsageError(f"{source}: invalid configuration: {e}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def _ini_sections(config: ExperimentConfig) -> List[str]:
    lines: List[str] = []
    for name in ExperimentConfig.model_fields:
        section = getattr(config, name)
        lines.append(f"[{name}]")
        for field_name, info in type(section).model_fields.items():
            lines.append(f"{info.alias or field_name} = {_render(getattr(section, field_name))}")
        lines.append("")
    return lines


def to_ini(config: ExperimentConfig) -> str:
    """Full serialization; every key of every section is written."""
    return "\n".join(_ini_sections(config))


def with_overrides(config: ExperimentConfig, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Apply ``--seed``/``--out`` on top of a loaded config."""
    update = {}
    if seed is not None:
        update["root_seed"] = seed
    if out is not None:
        update["output"] = str(out)
    if not update:
        return config
    experiment = config.experiment.model_copy(update=update)
    return config.model_copy(update={"experiment": experiment})


class Manifest(BaseModel):
    """What a run wrote and how to regenerate it."""

    subcommand: str
    config: ExperimentConfig
    derived_seeds: Dict[str, int] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)

    def to_ini(self) -> str:
        seeds = ",".join(f"{key}:{value}" for key, value in sorted(self.derived_seeds.items()))
        header = [
            f"[{MANIFEST_SECTION}]",
            f"version = {__version__}",
            f"subcommand = {self.subcommand}",
            f"prng = {PRNG_IDENTITY}",
            f"split_rule = {SPLIT_RULE}",
            f"root_seed = {self.config.experiment.root_seed}",
            f"derived_seeds = {seeds}",
            f"outputs = {','.join(self.outputs)}",
            "",
        ]
        return "\n".join(header + _ini_sections(self.config))


def write_manifest(directory: Union[str, Path], manifest: Manifest) -> Path:
    path = Path(directory) / f"{manifest.subcommand}.manifest.ini"
    path.write_text(manifest.to_ini(), encoding="utf-8", newline="\n")
    logger.info("Wrote manifest %s", path)
    return path


def read_manifest_outputs(path: Union[str, Path]) -> Sequence[str]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(path, encoding="utf-8")
    if not parser.has_section(MANIFEST_SECTION):
        raise UsageError(f"{path} has no [{MANIFEST_SECTION}] section")
    return [o for o in parser.get(MANIFEST_SECTION, "outputs", fallback="").split(",") if o]
