"""Binary checkpoint container and model (de)serialization.

Layout, all little-endian:

    magic   b"SGIM1\\0"
    seed    int64
    config  uint32 length + utf-8 key=value text
    count   uint32
    arrays  count times: uint16 name length + utf-8 name,
            uint8 ndim, int32 dims, float64 payload

Loading a saved checkpoint reproduces every byte of every array.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoders import EncoderParams, TeacherParams
from .errors import UsageError
from .generator import GeneratorFit, GeneratorParams
from .manipulate import IdentityExtractor

MAGIC = b"SGIM1\x00"


def save_checkpoint(path, arrays: dict[str, np.ndarray], config_text: str,
                    seed: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<q", seed))
        blob = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64, order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<i", d))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str, int]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise UsageError(f"{path}: not a checkpoint (magic {magic!r})")
        seed = struct.unpack("<q", fh.read(8))[0]
        config_len = struct.unpack("<I", fh.read(4))[0]
        config_text = fh.read(config_len).decode("utf-8")
        count = struct.unpack("<I", fh.read(4))[0]
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len = struct.unpack("<H", fh.read(2))[0]
            name = fh.read(name_len).decode("utf-8")
            ndim = struct.unpack("<B", fh.read(1))[0]
            shape = tuple(struct.unpack("<i", fh.read(4))[0]
                          for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n_items), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(np.float64, copy=True)
    return arrays, config_text, seed


def encoder_arrays(prefix: str, params: EncoderParams) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in params.arrays().items()}


def encoder_from_arrays(prefix: str, arrays: dict[str, np.ndarray],
                        frozen: bool = False) -> EncoderParams:
    try:
        parts = [arrays[f"{prefix}.{k}"] for k in
                 ("w1", "b1", "w2", "b2", "w3", "b3")]
    except KeyError as exc:
        raise UsageError(f"checkpoint missing {exc.args[0]}") from exc
    return EncoderParams(*parts, frozen=frozen)


def teacher_arrays(teacher: TeacherParams) -> dict[str, np.ndarray]:
    return {**encoder_arrays("text", teacher.text),
            **encoder_arrays("image", teacher.image)}


def teacher_from_arrays(arrays: dict[str, np.ndarray]) -> TeacherParams:
    return TeacherParams(text=encoder_from_arrays("text", arrays, frozen=True),
                         image=encoder_from_arrays("image", arrays, frozen=True))


def generator_arrays(fit: GeneratorFit) -> dict[str, np.ndarray]:
    out = {f"gen.mod{k}": m for k, m in enumerate(fit.params.layer_mods)}
    out["gen.bias"] = fit.params.bias
    out["gen.latents"] = fit.latents.reshape(fit.latents.shape[0], -1)
    return out


def generator_from_arrays(arrays: dict[str, np.ndarray]) -> GeneratorFit:
    mods = []
    k = 0
    while f"gen.mod{k}" in arrays:
        mods.append(arrays[f"gen.mod{k}"])
        k += 1
    if not mods or "gen.bias" not in arrays:
        raise UsageError("checkpoint does not hold a generator")
    side = len(mods)
    latent_dim = mods[0].shape[0]
    params = GeneratorParams(side, latent_dim, mods, arrays["gen.bias"])
    latents = arrays.get("gen.latents")
    if latents is not None:
        latents = latents.reshape(latents.shape[0], side, latent_dim)
    else:
        latents = np.zeros((0, side, latent_dim))
    return GeneratorFit(params, latents)


def identity_arrays(extractor: IdentityExtractor) -> dict[str, np.ndarray]:
    return {"id.w1": extractor.w1, "id.w2": extractor.w2}


def identity_from_arrays(arrays: dict[str, np.ndarray]) -> IdentityExtractor:
    if "id.w1" not in arrays or "id.w2" not in arrays:
        raise UsageError("checkpoint does not hold an identity extractor")
    return IdentityExtractor(arrays["id.w1"], arrays["id.w2"])


def latent_arrays(w: np.ndarray, gate: np.ndarray | None = None,
                  ) -> dict[str, np.ndarray]:
    out = {"latent.w": np.asarray(w, float)}
    if gate is not None:
        out["latent.gate"] = np.asarray(gate, float)
    return out


def latent_from_arrays(arrays: dict[str, np.ndarray],
                       ) -> tuple[np.ndarray, np.ndarray | None]:
    if "latent.w" not in arrays:
        raise UsageError("checkpoint does not hold a latent code")
    return arrays["latent.w"], arrays.get("latent.gate")
