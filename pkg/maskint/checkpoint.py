"""Model checkpoints: ModelConfig, every parameter and both codebooks in one MCKP file."""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict

from maskint.config import build_section, section_items
from maskint.containers import read_checkpoint, write_checkpoint
from maskint.errors import ContractError, FormatError
from maskint.specs import COLOR_CHANNEL, STRUCTURE_CHANNEL
from maskint.tokenizer import Codebook
from maskint.transformer import MaskintModel, ModelConfig, ModelParameters, param_shapes

_CODEBOOK_TENSOR = "codebook.{}"
_PATCH_KEYS = ("codebook.patch_height", "codebook.patch_width")


@dataclass
class Checkpoint:
    params: ModelParameters
    codebooks: Dict[str, Codebook]

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    def model(self, drop_structure: bool = False) -> MaskintModel:
        return MaskintModel(self.params, drop_structure=drop_structure)


def save_checkpoint(path, params: ModelParameters, codebooks: Dict[str, Codebook]) -> None:
    color = codebooks[COLOR_CHANNEL]
    if (color.size, codebooks[STRUCTURE_CHANNEL].size) != (
        params.config.color_vocab,
        params.config.structure_vocab,
    ):
        raise ContractError("Codebook sizes do not match the model vocabularies")
    config = OrderedDict(section_items("model", params.config))
    config.update(zip(_PATCH_KEYS, (str(p) for p in color.patch_shape)))
    tensors = OrderedDict(params.arrays)
    for channel in [COLOR_CHANNEL, STRUCTURE_CHANNEL]:
        tensors[_CODEBOOK_TENSOR.format(channel)] = codebooks[channel].entries
    write_checkpoint(path, config, tensors)
    logging.info(f"Checkpoint saved to {path}")


def load_checkpoint(path) -> Checkpoint:
    content = read_checkpoint(path)
    model_items = {k[len("model.") :]: v for k, v in content.config.items() if k.startswith("model.")}
    try:
        config = build_section(ModelConfig, model_items, "model")
        patch_shape = tuple(int(content.config[k]) for k in _PATCH_KEYS)
        params = ModelParameters(config, OrderedDict((name, content.tensors[name]) for name in param_shapes(config)))
        codebooks = {
            channel: Codebook(content.tensors[_CODEBOOK_TENSOR.format(channel)], channel, patch_shape)
            for channel in [COLOR_CHANNEL, STRUCTURE_CHANNEL]
        }
    except KeyError as exc:
        raise FormatError(f"{path}: missing entry {exc}")
    except (ContractError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: inconsistent checkpoint ({exc})")
    return Checkpoint(params, codebooks)
