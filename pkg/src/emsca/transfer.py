"""Transfer learning by retraining a masked subset of a pretrained model's layers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .errors import ArgumentError, ContractError, DataError
from .mlp import MlpModel, TrainConfig, TrainReport, fit, he_layer
from .spectral import SpectralDataset

MODES = ("output_only", "input_only", "freeze_top", "freeze_bottom", "custom")


@dataclass(frozen=True)
class FreezeSpec:
    """Which layers stay trainable during transfer.

    Layer 0 is the input-side ("bottom") layer, the last one the output
    ("top") layer. ``freeze_top``/``freeze_bottom`` freeze ``k`` layers from
    that end; ``custom`` takes an explicit trainable ``mask``.
    """

    mode: str = "output_only"
    k: int = 0
    mask: tuple[bool, ...] | None = None
    reinit_unfrozen: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"unknown freeze mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "custom" and self.mask is None:
            raise ArgumentError("custom freeze mode needs a mask")
        if self.mask is not None:
            object.__setattr__(self, "mask", tuple(bool(m) for m in self.mask))

    def trainable_mask(self, n_layers: int) -> list[bool]:
        if self.mode == "output_only":
            mask = [False] * (n_layers - 1) + [True]
        elif self.mode == "input_only":
            mask = [True] + [False] * (n_layers - 1)
        elif self.mode == "freeze_bottom":
            mask = [i >= self.k for i in range(n_layers)]
        elif self.mode == "freeze_top":
            mask = [i < n_layers - self.k for i in range(n_layers)]
        else:
            mask = list(self.mask)
            if len(mask) != n_layers:
                raise ArgumentError(f"mask has {len(mask)} entries for {n_layers} layers")
        if not any(mask):
            raise ArgumentError(f"freeze spec {self} leaves no trainable layer")
        return mask

    @classmethod
    def parse(cls, text: str, reinit: bool = False) -> "FreezeSpec":
        """Parse CLI forms: ``output_only``, ``freeze_top:2``, ``custom:001011``."""
        mode, _, arg = text.partition(":")
        if mode in ("freeze_top", "freeze_bottom"):
            try:
                return cls(mode, k=int(arg), reinit_unfrozen=reinit)
            except ValueError as exc:
                raise ArgumentError(f"{mode} needs an integer count, got {arg!r}") from exc
        if mode == "custom":
            if not arg or set(arg) - {"0", "1"}:
                raise ArgumentError(f"custom mask must be a 0/1 string, got {arg!r}")
            return cls(mode, mask=tuple(c == "1" for c in arg), reinit_unfrozen=reinit)
        return cls(mode, reinit_unfrozen=reinit)

    def describe(self) -> str:
        if self.mode in ("freeze_top", "freeze_bottom"):
            return f"{self.mode}:{self.k}"
        if self.mode == "custom":
            return "custom:" + "".join("1" if m else "0" for m in self.mask)
        return self.mode


def transfer_fit(pretrained: MlpModel, target_train: SpectralDataset,
                 target_val: SpectralDataset | None = None, spec: FreezeSpec | None = None,
                 config: TrainConfig | None = None) -> tuple[MlpModel, TrainReport]:
    """Adapt a copy of ``pretrained`` to the target data; the input is left untouched.

    The pretrained scaler is kept, so target rows reach the frozen layers in
    the distribution those layers were trained on.
    """
    spec = spec or FreezeSpec()
    config = config or TrainConfig()
    if target_train.n_rows == 0:
        raise DataError("target training set is empty")
    model = pretrained.copy()
    mask = spec.trainable_mask(model.n_layers)

    out = model.n_layers - 1
    if target_train.n_classes != model.n_outputs:
        if not spec.reinit_unfrozen:
            raise ContractError(
                f"target has {target_train.n_classes} classes but the model outputs "
                f"{model.n_outputs}; set reinit_unfrozen to rebuild the output layer")
        if not mask[out]:
            raise ContractError("rebuilding the output layer requires it to be trainable")
        model.layer_dims[-1] = target_train.n_classes
        model.class_names = list(target_train.class_names)
    elif model.class_names and model.class_names != target_train.class_names:
        if not spec.reinit_unfrozen:
            raise ContractError(f"class lists differ: model {model.class_names} "
                                f"vs target {target_train.class_names}")
        model.class_names = list(target_train.class_names)

    if spec.reinit_unfrozen:
        for i, trainable in enumerate(mask):
            if trainable:
                model.weights[i], model.biases[i] = he_layer(
                    model.layer_dims[i], model.layer_dims[i + 1], config.seed, i, model.dtype)
    model.set_trainable(mask)
    report = fit(model, target_train, target_val, config)
    return model, report


def compare_cost(full: TrainReport, transfer: TrainReport) -> dict:
    """Time and parameter ratios of a transfer run against a full training run."""
    warning = None
    if full.epochs != transfer.epochs:
        warning = f"epoch counts differ ({full.epochs} vs {transfer.epochs}); ratios not comparable"
    elif full.n_train != transfer.n_train:
        warning = (f"training set sizes differ ({full.n_train} vs {transfer.n_train}); "
                   "ratios not comparable")
    if warning:
        warnings.warn(warning, stacklevel=2)
    return {
        "time_ratio": transfer.wall_time_seconds / full.wall_time_seconds,
        "param_ratio": transfer.trainable_params / full.trainable_params,
        "full_wall_time_seconds": full.wall_time_seconds,
        "transfer_wall_time_seconds": transfer.wall_time_seconds,
        "full_trainable_params": full.trainable_params,
        "transfer_trainable_params": transfer.trainable_params,
        "epochs": [full.epochs, transfer.epochs],
        "warning": warning,
    }
