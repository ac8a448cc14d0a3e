"""Seeded multi-domain token datasets with controllable shift.

Each image is a bag of N+1 token embeddings: token 0 is a CLS-analog drawn
around the class prototype, and the N patch tokens cycle through a handful of
semantic regions (one class-specific object region plus shared background
regions), giving token clustering real structure to find. Class prototypes
deliberately lean away from the scoring anchors by a fixed in-class distractor
component, so prompt training has signal to recover that zero-shot scoring
alone cannot. Domains differ by a seeded near-identity rotation, an additive
style shift, and the noise scale.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import Rng, gram_schmidt, orthonormal_rows

ANCHOR_STREAM = 7001  # spawn key shared with the scoring head


class GeneratorConfigError(ValueError):
    """Invalid dataset-generation configuration."""


@dataclass(frozen=True)
class DomainSpec:
    name: str
    shift_scale: float = 0.0        # magnitude of the additive style shift
    rotation_strength: float = 0.0  # 0 = identity feature rotation
    noise_sigma: float = 0.45

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise GeneratorConfigError(f"domain '{self.name}': noise_sigma must be >= 0")


@dataclass
class Sample:
    tokens: np.ndarray  # (N+1, D)
    label: int
    domain: str


@dataclass(frozen=True)
class GeneratorConfig:
    classes: int = 7
    dims: int = 64
    tokens_per_image: int = 17       # N+1, CLS-analog included
    regions: int = 4                 # 1 object region + (regions-1) backgrounds
    samples_per_class: int = 40
    domains: tuple[DomainSpec, ...] = (
        DomainSpec("d0", shift_scale=0.00, rotation_strength=0.00),
        DomainSpec("d1", shift_scale=0.08, rotation_strength=0.05),
        DomainSpec("d2", shift_scale=0.16, rotation_strength=0.10),
        DomainSpec("d3", shift_scale=0.24, rotation_strength=0.15),
    )
    distractor_weight: float = 0.55  # off-anchor lean of the class prototypes
    seed: int = 0
    anchor_seed: int = 0             # must match the scoring head's seed

    def __post_init__(self):
        errs = []
        if self.classes > self.dims:
            errs.append(f"classes={self.classes} exceeds dims={self.dims}; "
                        "orthogonal class anchors are impossible")
        if self.regions < 2:
            errs.append("regions must be >= 2 (object + at least one background)")
        if self.tokens_per_image < self.regions + 1:
            errs.append("tokens_per_image must cover CLS plus one token per region")
        if not 0 <= self.distractor_weight < 1:
            errs.append("distractor_weight must lie in [0, 1)")
        if self.samples_per_class < 1:
            errs.append("samples_per_class must be >= 1")
        if len(self.domains) < 1:
            errs.append("need at least one domain")
        if len({d.name for d in self.domains}) != len(self.domains):
            errs.append("domain names must be unique")
        if errs:
            raise GeneratorConfigError("; ".join(errs))

    @property
    def domain_names(self) -> list[str]:
        return [d.name for d in self.domains]


def class_anchors(classes: int, dims: int, anchor_seed: int) -> np.ndarray:
    """Orthonormal per-class anchor directions shared by data and scoring head."""
    return orthonormal_rows(classes, dims, Rng(anchor_seed, (ANCHOR_STREAM,)))


def _semantic_basis(cfg: GeneratorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(anchors, distractors, backgrounds): mutually orthonormal when dims allow."""
    anchors = class_anchors(cfg.classes, cfg.dims, cfg.anchor_seed)
    rng = Rng(cfg.seed, (1,))
    extra = cfg.classes + (cfg.regions - 1)
    draws = rng.normal((extra, cfg.dims))
    if cfg.classes + extra <= cfg.dims:
        basis = gram_schmidt(np.vstack([anchors, draws]))
        rest = basis[cfg.classes:]
    else:
        # not enough room for a full orthogonal complement: orthogonalize
        # against the anchors only
        rest = draws - (draws @ anchors.T) @ anchors
        rest /= np.linalg.norm(rest, axis=1)[:, None]
    return anchors, rest[:cfg.classes], rest[cfg.classes:]


def _rotation(dim: int, strength: float, rng: Rng) -> np.ndarray:
    """Seeded near-identity orthogonal matrix; exact identity at strength 0."""
    if strength == 0.0:
        return np.eye(dim)
    q, r = np.linalg.qr(np.eye(dim) + strength * rng.normal((dim, dim)))
    return q * np.sign(np.diag(r))[None, :]


def _region_of(patch_index: int, regions: int) -> int:
    return patch_index % regions


def generate(cfg: GeneratorConfig) -> dict[str, list[Sample]]:
    """Full deterministic dataset, one sample list per domain."""
    anchors, distractors, backgrounds = _semantic_basis(cfg)
    kappa = cfg.distractor_weight
    protos = np.sqrt(1 - kappa ** 2) * anchors + kappa * distractors  # (C, D) unit

    dataset: dict[str, list[Sample]] = {}
    n_patches = cfg.tokens_per_image - 1
    for d_idx, dom in enumerate(cfg.domains):
        rot = _rotation(cfg.dims, dom.rotation_strength, Rng(cfg.seed, (2, d_idx)))
        shift = dom.shift_scale * Rng(cfg.seed, (3, d_idx)).normal(cfg.dims) / np.sqrt(cfg.dims)
        samples = []
        for label in range(cfg.classes):
            means = np.empty((cfg.tokens_per_image, cfg.dims))
            means[0] = protos[label]
            for j in range(n_patches):
                r = _region_of(j, cfg.regions)
                means[j + 1] = protos[label] if r == 0 else backgrounds[r - 1]
            means = means @ rot.T + shift[None, :]
            for s_idx in range(cfg.samples_per_class):
                noise_rng = Rng(cfg.seed, (4, d_idx, label, s_idx))
                tokens = means + dom.noise_sigma * noise_rng.normal(means.shape)
                samples.append(Sample(tokens=tokens, label=label, domain=dom.name))
        dataset[dom.name] = samples
    return dataset


@dataclass
class ClientData:
    domain: str
    train: list[Sample]
    eval: list[Sample] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.train)


def leave_one_out(dataset: dict[str, list[Sample]], target_domain: str,
                  split: float = 0.9, split_seed: int = 0
                  ) -> tuple[list[ClientData], list[Sample]]:
    """One client per source domain; the target domain is held out entirely."""
    if target_domain not in dataset:
        raise GeneratorConfigError(
            f"unknown target domain '{target_domain}' "
            f"(available: {sorted(dataset)})")
    if len(dataset) < 2:
        raise GeneratorConfigError("leave-one-domain-out needs at least two domains")
    if not 0 < split <= 1:
        raise GeneratorConfigError("split ratio must lie in (0, 1]")

    clients = []
    for d_idx, (name, samples) in enumerate(dataset.items()):
        if name == target_domain:
            continue
        order = Rng(split_seed, (5, d_idx)).permutation(len(samples))
        cut = max(1, int(round(split * len(samples))))
        train = [samples[i] for i in order[:cut]]
        held = [samples[i] for i in order[cut:]]
        clients.append(ClientData(domain=name, train=train, eval=held))
    return clients, list(dataset[target_domain])


def save_fixture(dataset: dict[str, list[Sample]], cfg: GeneratorConfig,
                 path) -> None:
    """Export as JSON lines: one header object, then one record per sample."""
    header = {
        "classes": cfg.classes,
        "dims": cfg.dims,
        "tokens_per_image": cfg.tokens_per_image,
        "domains": cfg.domain_names,
        "anchor_seed": cfg.anchor_seed,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for name in cfg.domain_names:
            for s in dataset[name]:
                rec = {"domain": s.domain, "label": s.label,
                       "tokens": s.tokens.reshape(-1).tolist()}
                fh.write(json.dumps(rec) + "\n")


def load_fixture(path) -> tuple[dict[str, list[Sample]], dict]:
    """Load a fixture file; returns (dataset, header). Bit-exact round trip."""
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        shape = (header["tokens_per_image"], header["dims"])
        dataset: dict[str, list[Sample]] = {name: [] for name in header["domains"]}
        for line in fh:
            rec = json.loads(line)
            tokens = np.array(rec["tokens"], dtype=np.float64).reshape(shape)
            dataset[rec["domain"]].append(
                Sample(tokens=tokens, label=rec["label"], domain=rec["domain"]))
    return dataset, header
