"""Synthetic domain pools with planted family structure and known ground truth.

Families are directions in feature space: each family center sits on a shell
around the benign reference Gaussian (standard normal at the origin), pairwise
separated by at least the configured distance. Every attack is an isotropic
Gaussian at a jittered copy of its family center, so attacks within a family
overlap heavily while families stay apart. The shell radius equals the family
separation, which also plants the benign/adversarial displacement that makes
detection learnable.

The unseen target attack mixes family regions according to the configured
weights, with each family region displaced by a fresh random offset so the
target overlaps the training coverage without duplicating any training attack.

Every draw flows from the spec seed through named sub-streams, so pools,
benign splits, and targets are independently reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .advscl import LabeledExampleSet
from .errors import ConfigError, InfeasibleSeparation, IoFailure
from .numerics import Rng, make_rng

_CENTER_ATTEMPTS = 1000
TARGET_ATTACK_ID = "target"
BENIGN_ID = "benign"


@dataclass(frozen=True)
class SynthSpec:
    families: int = 3
    attacks_per_family: tuple[int, ...] = (5, 3, 2)
    dim: int = 8
    family_separation: float = 4.0
    within_family_spread: float = 1.0
    samples_per_attack: int = 60
    target_mixture: tuple[float, ...] = (0.34, 0.33, 0.33)
    seed: int = 0

    def __post_init__(self):
        if self.families < 1:
            raise ConfigError("families", "must be >= 1")
        if len(self.attacks_per_family) != self.families:
            raise ConfigError("attacks_per_family", f"need {self.families} counts")
        if any(c < 1 for c in self.attacks_per_family):
            raise ConfigError("attacks_per_family", "all counts must be >= 1")
        if self.dim < 1:
            raise ConfigError("dim", "must be >= 1")
        if not (self.family_separation > self.within_family_spread > 0):
            raise ConfigError("family_separation", "need separation > spread > 0")
        if self.samples_per_attack < 1:
            raise ConfigError("samples_per_attack", "must be >= 1")
        if len(self.target_mixture) != self.families:
            raise ConfigError("target_mixture", f"need {self.families} weights")
        if any(w < 0 for w in self.target_mixture):
            raise ConfigError("target_mixture", "weights must be >= 0")
        if abs(sum(self.target_mixture) - 1.0) > 1e-9:
            raise ConfigError("target_mixture", "weights must sum to 1")

    @property
    def total_attacks(self) -> int:
        return int(sum(self.attacks_per_family))


@dataclass
class PlantedLayout:
    family_centers: np.ndarray = field(repr=False)
    attack_centers: np.ndarray = field(repr=False)
    attack_ids: list[str] = field(default_factory=list)
    families: dict[str, int] = field(default_factory=dict)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def plant_layout(spec: SynthSpec) -> PlantedLayout:
    """Family and attack centers, deterministic from the spec seed."""
    rng = make_rng(spec.seed).derive("layout")
    radius = spec.family_separation
    centers = []
    for _ in range(spec.families):
        for _ in range(_CENTER_ATTEMPTS):
            candidate = radius * _unit(rng.gen.normal(size=spec.dim))
            if all(np.linalg.norm(candidate - c) >= spec.family_separation
                   for c in centers):
                centers.append(candidate)
                break
        else:
            raise InfeasibleSeparation(
                f"could not place {spec.families} centers at separation "
                f"{spec.family_separation} in dim {spec.dim}"
            )
    family_centers = np.vstack(centers)

    attack_centers = []
    attack_ids = []
    families = {}
    idx = 0
    for fam, count in enumerate(spec.attacks_per_family):
        for _ in range(count):
            jitter = spec.within_family_spread * rng.gen.normal(size=spec.dim)
            attack_centers.append(family_centers[fam] + jitter)
            attack_id = f"atk{idx:02d}"
            attack_ids.append(attack_id)
            families[attack_id] = fam
            idx += 1
    return PlantedLayout(family_centers, np.vstack(attack_centers), attack_ids, families)


def gen_pool(spec: SynthSpec, split: str = "pool") -> tuple[LabeledExampleSet, dict[str, int]]:
    """Adversarial examples for every attack plus the planted family map.

    `split` names an independent sample sub-stream over the same planted
    layout, so disjoint splits (acquisition vs clustering) share geometry
    but no samples.
    """
    layout = plant_layout(spec)
    rng = make_rng(spec.seed).derive(f"samples/{split}")
    ids: list[str] = []
    rows = []
    for attack_id, center in zip(layout.attack_ids, layout.attack_centers):
        noise = rng.gen.normal(size=(spec.samples_per_attack, spec.dim))
        rows.append(center + spec.within_family_spread * noise)
        ids.extend([attack_id] * spec.samples_per_attack)
    return LabeledExampleSet(ids, np.vstack(rows)), layout.families


def gen_benign(spec: SynthSpec, count: int, split: str = "benign") -> np.ndarray:
    """Benign reference samples: standard normal at the origin."""
    rng = make_rng(spec.seed).derive(f"benign/{split}")
    return rng.gen.normal(size=(count, spec.dim))


def gen_target(spec: SynthSpec, rng: Rng) -> LabeledExampleSet:
    """Unseen attack: a displaced mixture over the planted family regions."""
    layout = plant_layout(spec)
    offsets = np.vstack([
        2.0 * spec.within_family_spread * _unit(rng.gen.normal(size=spec.dim))
        for _ in range(spec.families)
    ])
    picks = rng.gen.choice(spec.families, size=spec.samples_per_attack,
                           p=np.asarray(spec.target_mixture))
    noise = spec.within_family_spread * rng.gen.normal(
        size=(spec.samples_per_attack, spec.dim))
    samples = layout.family_centers[picks] + offsets[picks] + noise
    return LabeledExampleSet([TARGET_ATTACK_ID] * spec.samples_per_attack, samples)


# --------------------------------------------------------------------------
# key=value spec files

_FIELD_PARSERS = {
    "families": int,
    "attacks_per_family": lambda s: tuple(int(p) for p in s.split(",")),
    "dim": int,
    "family_separation": float,
    "within_family_spread": float,
    "samples_per_attack": int,
    "target_mixture": lambda s: tuple(float(p) for p in s.split(",")),
    "seed": int,
}


def parse_spec_text(text: str) -> SynthSpec:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELD_PARSERS:
            raise ConfigError(key, "unknown synth field")
        try:
            values[key] = _FIELD_PARSERS[key](raw.strip())
        except ValueError as exc:
            raise ConfigError(key, f"bad value: {exc}") from exc
    return SynthSpec(**values)


def load_spec(path) -> SynthSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_spec_text(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot open spec {path}: {exc}") from exc


def save_spec(spec: SynthSpec, path):
    lines = [
        f"families={spec.families}",
        "attacks_per_family=" + ",".join(str(c) for c in spec.attacks_per_family),
        f"dim={spec.dim}",
        f"family_separation={spec.family_separation!r}",
        f"within_family_spread={spec.within_family_spread!r}",
        f"samples_per_attack={spec.samples_per_attack}",
        "target_mixture=" + ",".join(repr(w) for w in spec.target_mixture),
        f"seed={spec.seed}",
    ]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines))
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write spec {path}: {exc}") from exc
