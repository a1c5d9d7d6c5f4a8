"""Run configuration: one JSON document drives every subcommand.

Overrides use dotted keys mirroring the document structure
("attack.ranker=delete_baseline"); values are parsed as JSON with a plain
string fallback. Artifact names embed the hash of the canonical config so
reruns with an identical config land on identical files.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field

from . import nn
from .attack import RANKERS
from .selector import SelectorConfig
from .target import TargetConfig


class ValidationError(ValueError):
    """Bad configuration or mismatched artifacts; the run never starts."""


@dataclass
class PathsConfig:
    target_train: str = ""
    target_eval: str = ""
    substitute_train: str = ""
    embeddings: str = ""
    out_dir: str = "runs"


@dataclass
class AttackRunConfig:
    epsilon: float = 0.85
    n_syn: int = 50
    syn_threshold: float = 0.5
    ranker: str = "explain"
    eval_cap: int = 100
    workers: int = 1
    cache: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon <= 1.0:
            raise ValidationError(f"attack.epsilon must be in (0, 1], got {self.epsilon}")
        if self.ranker not in RANKERS:
            raise ValidationError(f"attack.ranker must be one of {RANKERS}")
        if self.eval_cap < 1:
            raise ValidationError("attack.eval_cap must be at least 1")
        if self.workers < 1:
            raise ValidationError("attack.workers must be at least 1")


@dataclass
class RunConfig:
    seed: int
    n_classes: int
    d: int
    min_count: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    target: TargetConfig = None
    selector: SelectorConfig = None
    attack: AttackRunConfig = field(default_factory=AttackRunConfig)

    def canonical_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_classes": self.n_classes,
            "d": self.d,
            "min_count": self.min_count,
            "paths": asdict(self.paths),
            "target": asdict(self.target),
            "selector": asdict(self.selector),
            "attack": asdict(self.attack),
        }

    def config_hash(self) -> str:
        return nn.json_hash(self.canonical_dict())


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ValidationError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_overrides(doc: dict, overrides: list[str]) -> dict:
    doc = copy.deepcopy(doc)
    for text in overrides:
        path, value = _parse_override(text)
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {text!r} descends into a non-section")
        node[path[-1]] = value
    return doc


def _build(doc: dict) -> RunConfig:
    try:
        seed = int(doc["seed"])
        n_classes = int(doc["n_classes"])
        d = int(doc["d"])
    except KeyError as exc:
        raise ValidationError(f"config is missing required key {exc}") from exc
    min_count = int(doc.get("min_count", 1))

    shared = {"d": d, "n_classes": n_classes, "seed": seed}
    try:
        target = TargetConfig(**{**doc.get("target", {}), **shared})
        selector = SelectorConfig(**{**doc.get("selector", {}), **shared})
        attack = AttackRunConfig(**doc.get("attack", {}))
        paths = PathsConfig(**doc.get("paths", {}))
    except TypeError as exc:
        raise ValidationError(f"bad config section: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc

    out_override = os.environ.get("SYNATTACK_OUT_DIR")
    if out_override:
        paths.out_dir = out_override
    return RunConfig(
        seed=seed,
        n_classes=n_classes,
        d=d,
        min_count=min_count,
        paths=paths,
        target=target,
        selector=selector,
        attack=attack,
    )


def load_run_config(path: str, overrides: list[str] | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path} must hold a JSON object")
    return _build(_apply_overrides(doc, overrides or []))


def require_file(path: str, what: str) -> str:
    if not path:
        raise ValidationError(f"no path configured for {what}")
    if not os.path.isfile(path):
        raise ValidationError(f"{what} not found at {path}")
    return path
