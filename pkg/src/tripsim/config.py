"""Experiment configuration: defaults, presets, validation, serialization.

Defaults mirror the published training recipe: capacity factor 1.0 for
training and 2.0 at inference, KL coefficient 0.8, AdamW at 4e-4 with batch
size 16, one local epoch, 15 communication rounds, orthogonal key
initialization. The ``trip`` preset uses 4 experts of 32 prompt tokens; the
``trip-lite`` preset uses 2 experts of a single token each.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .data import DomainSpec, GeneratorConfig


class ConfigError(ValueError):
    """Invalid experiment configuration; message lists every field path."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class AblationFlags:
    no_capacity: bool = False
    no_static_keys: bool = False
    random_assignment: bool = False
    no_kl: bool = False


@dataclass
class ExperimentConfig:
    experts: int = 4
    prompt_tokens: int = 32
    dims: int = 64
    train_alpha: float = 1.0
    inference_alpha: float = 2.0
    beta: float = 0.8
    tau: float = 0.07
    lr: float = 4e-4
    weight_decay: float = 0.01
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 16
    rounds: int = 15
    local_epochs: int = 1
    key_strategy: str = "orthogonal"
    target_domain: str = "d3"
    split_ratio: float = 0.9
    cluster_max_iters: int = 10
    cluster_tol: float = 1e-4
    eta_theta: float = 0.1
    seed_data: int = 0
    seed_model: int = 0
    seed_clustering: int = 0
    generator: GeneratorConfig | None = None
    fixture_path: str | None = None
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.generator is None and self.fixture_path is None:
            self.generator = GeneratorConfig(
                dims=self.dims, seed=self.seed_data, anchor_seed=self.seed_model)

    @property
    def params_per_client_round(self) -> int:
        """Communicated prompt parameters per client per round: M * L * D."""
        return self.experts * self.prompt_tokens * self.dims

    @property
    def key_params(self) -> int:
        """One-time key broadcast payload per client: M * D."""
        return self.experts * self.dims

    def validate(self) -> None:
        p = []
        if self.experts < 1:
            p.append("experts: must be >= 1")
        if self.prompt_tokens < 1:
            p.append("prompt_tokens: must be >= 1")
        if self.dims < 1:
            p.append("dims: must be >= 1")
        if not self.train_alpha > 0:
            p.append("train_alpha: must be > 0")
        if not self.inference_alpha > 0:
            p.append("inference_alpha: must be > 0")
        if self.beta < 0:
            p.append("beta: must be >= 0")
        if not self.tau > 0:
            p.append("tau: must be > 0")
        if self.lr < 0:
            p.append("lr: must be >= 0")
        if self.weight_decay < 0:
            p.append("weight_decay: must be >= 0")
        if self.batch_size < 1:
            p.append("batch_size: must be >= 1")
        if self.rounds < 0:
            p.append("rounds: must be >= 0")
        if self.local_epochs < 0:
            p.append("local_epochs: must be >= 0")
        if self.key_strategy not in ("uniform", "normal", "binary", "orthogonal"):
            p.append(f"key_strategy: unknown strategy '{self.key_strategy}'")
        if self.key_strategy == "orthogonal" and self.experts > self.dims:
            p.append("experts: orthogonal keys need experts <= dims")
        if not 0 < self.split_ratio <= 1:
            p.append("split_ratio: must lie in (0, 1]")
        if self.cluster_max_iters < 1:
            p.append("cluster_max_iters: must be >= 1")
        if not self.eta_theta > 0:
            p.append("eta_theta: must be > 0")
        for name in ("seed_data", "seed_model", "seed_clustering"):
            if getattr(self, name) < 0:
                p.append(f"{name}: must be >= 0")
        if self.generator is not None:
            if self.generator.dims != self.dims:
                p.append(f"generator.dims: {self.generator.dims} does not match dims={self.dims}")
            if self.fixture_path is None and self.target_domain not in self.generator.domain_names:
                p.append(f"target_domain: '{self.target_domain}' not among generator domains "
                         f"{self.generator.domain_names}")
        if self.generator is None and self.fixture_path is None:
            p.append("generator: either an inline generator config or a fixture_path is required")
        if p:
            raise ConfigError(p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        if self.generator is not None:
            g = asdict(self.generator)
            g["domains"] = [asdict(ds) for ds in self.generator.domains]
            d["generator"] = g
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in unknown])
        kw = dict(d)
        if kw.get("adam_betas") is not None:
            kw["adam_betas"] = tuple(kw["adam_betas"])
        if kw.get("ablation") is not None and not isinstance(kw["ablation"], AblationFlags):
            kw["ablation"] = AblationFlags(**kw["ablation"])
        if kw.get("generator") is not None and not isinstance(kw["generator"], GeneratorConfig):
            g = dict(kw["generator"])
            if g.get("domains") is not None:
                g["domains"] = tuple(
                    ds if isinstance(ds, DomainSpec) else DomainSpec(**ds)
                    for ds in g["domains"])
            kw["generator"] = GeneratorConfig(**g)
        try:
            cfg = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError([str(exc)]) from exc
        return cfg


def preset(name: str) -> dict:
    """Named size presets; returned as overrides for ExperimentConfig."""
    presets = {
        "trip": {"experts": 4, "prompt_tokens": 32},
        "trip-lite": {"experts": 2, "prompt_tokens": 1},
    }
    if name not in presets:
        raise ConfigError([f"preset: unknown preset '{name}' (choose from {sorted(presets)})"])
    return dict(presets[name])
