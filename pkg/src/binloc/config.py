"""Experiment configuration: profiles, key=value files, flag overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .frontend import FrontendConfig
from .losses import LossConfig
from .model import ModelConfig
from .util import config_hash, read_kv, write_kv

__all__ = ["ExperimentConfig", "desk_profile", "full_profile", "PROFILES"]

ENV_FILTERS = ("AE", "RV", "AE+RV")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training run needs, in one serializable bundle."""

    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    lr: float = 1e-4
    batch: int = 48
    epochs: int = 50
    seed: int = 0
    env_filter: str = "AE+RV"
    early_stop_train_ad: float | None = None
    use_cache: bool = True

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.env_filter not in ENV_FILTERS:
            raise ValueError(
                f"env_filter must be one of {ENV_FILTERS}, got {self.env_filter!r}")

    @property
    def environments(self) -> tuple[str, ...]:
        return ("AE", "RV") if self.env_filter == "AE+RV" else (self.env_filter,)

    def key_values(self) -> dict:
        kv = dict(self.model.key_values())
        kv.update({f"loss_{k}": v for k, v in self.loss.key_values().items()})
        kv.update({f"frontend_{k}": v for k, v in self.frontend.key_values().items()})
        kv.update({
            "lr": self.lr, "batch": self.batch, "epochs": self.epochs,
            "seed": self.seed, "env_filter": self.env_filter,
            "early_stop_train_ad": self.early_stop_train_ad,
            "use_cache": self.use_cache,
        })
        return kv

    def hash(self) -> str:
        return config_hash(self.key_values())

    def save(self, path) -> None:
        write_kv(path, self.key_values())

    @classmethod
    def from_kv(cls, kv: dict[str, str],
                base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        cfg = base if base is not None else cls()

        def boolean(s: str) -> bool:
            return str(s).lower() in ("true", "1", "yes")

        model_kv = {k: v for k, v in kv.items()
                    if k in ModelConfig().key_values()}
        model = ModelConfig.from_kv({**{str(k): str(v) for k, v in
                                        cfg.model.key_values().items()},
                                     **model_kv})
        loss = LossConfig(
            kind=kv.get("loss_kind", cfg.loss.kind),
            alpha=float(kv.get("loss_alpha", cfg.loss.alpha)),
            epsilon=float(kv.get("loss_epsilon", cfg.loss.epsilon)),
        )
        frontend = FrontendConfig(
            window_length=int(kv.get("frontend_window_length",
                                     cfg.frontend.window_length)),
            hop=int(kv.get("frontend_hop", cfg.frontend.hop)),
            nfft=int(kv.get("frontend_nfft", cfg.frontend.nfft)),
            tukey_shape=float(kv.get("frontend_tukey_shape",
                                     cfg.frontend.tukey_shape)),
            log_compress=boolean(kv.get("frontend_log_compress",
                                        cfg.frontend.log_compress)),
            standardize=boolean(kv.get("frontend_standardize",
                                       cfg.frontend.standardize)),
        )
        stop = kv.get("early_stop_train_ad", cfg.early_stop_train_ad)
        if isinstance(stop, str):
            stop = None if stop.lower() in ("none", "") else float(stop)
        return cls(
            model=model, loss=loss, frontend=frontend,
            lr=float(kv.get("lr", cfg.lr)),
            batch=int(kv.get("batch", cfg.batch)),
            epochs=int(kv.get("epochs", cfg.epochs)),
            seed=int(kv.get("seed", cfg.seed)),
            env_filter=kv.get("env_filter", cfg.env_filter),
            early_stop_train_ad=stop,
            use_cache=boolean(kv.get("use_cache", cfg.use_cache)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_kv(read_kv(path))

    def override(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


def full_profile() -> ExperimentConfig:
    """The full-scale training recipe (needs GPU-class hardware)."""
    return ExperimentConfig()


def desk_profile() -> ExperimentConfig:
    """CPU-friendly profile: slim model, coarser patch stride, faster lr."""
    return ExperimentConfig(
        model=ModelConfig(dim=128, heads=4, mlp_dim=256, stride=12, dropout=0.0),
        lr=5e-4, batch=16, epochs=150,
    )


PROFILES = {"full": full_profile, "desk": desk_profile}
