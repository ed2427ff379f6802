"""Generator and critic networks.

Generator: ``h1 = ReLU(FC(z))``; the output is a ReLU numeric head
concatenated with one Gumbel-softmax head per categorical column. Critic: two
LeakyReLU(0.01) layers of width ``l_w`` and a linear scalar head.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node
from .tabular import FittedTransformer

PARAMS_FORMAT = "fairtab.params"
PARAMS_VERSION = 1

GUMBEL_TAU = 0.2
LEAKY_SLOPE = 0.01


@dataclass
class Dense:
    weight: Node  # (fan_in, fan_out)
    bias: Node  # (fan_out,)

    def __call__(self, x: Node) -> Node:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator, name: str) -> Dense:
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return cls(ad.parameter(w, f"{name}.weight"), ad.parameter(np.zeros(fan_out), f"{name}.bias"))


@dataclass
class GeneratorParams:
    hidden: Dense
    numeric: Dense | None
    categorical: list[Dense]
    tau: float = GUMBEL_TAU

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"gumbel temperature must be positive, got {self.tau}")

    @property
    def width(self) -> int:
        return self.hidden.weight.shape[0]

    def layers(self) -> list[tuple[str, Dense]]:
        out = [("hidden", self.hidden)]
        if self.numeric is not None:
            out.append(("numeric", self.numeric))
        out.extend((f"categorical{i}", d) for i, d in enumerate(self.categorical))
        return out

    def parameters(self) -> list[Node]:
        return [p for _, d in self.layers() for p in (d.weight, d.bias)]


@dataclass
class CriticParams:
    layer1: Dense
    layer2: Dense
    head: Dense

    @property
    def width(self) -> int:
        return self.layer1.weight.shape[0]

    def layers(self) -> list[tuple[str, Dense]]:
        return [("layer1", self.layer1), ("layer2", self.layer2), ("head", self.head)]

    def parameters(self) -> list[Node]:
        return [p for _, d in self.layers() for p in (d.weight, d.bias)]


def init_params(fitted: FittedTransformer, rng: np.random.Generator) -> tuple[GeneratorParams, CriticParams]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    lw = fitted.width
    gen = GeneratorParams(
        hidden=Dense.init(lw, lw, rng, "gen.hidden"),
        numeric=Dense.init(lw, fitted.n_numeric, rng, "gen.numeric") if fitted.n_numeric else None,
        categorical=[Dense.init(lw, li, rng, f"gen.categorical{i}") for i, li in enumerate(fitted.block_widths)],
    )
    critic = CriticParams(
        layer1=Dense.init(lw, lw, rng, "critic.layer1"),
        layer2=Dense.init(lw, lw, rng, "critic.layer2"),
        head=Dense.init(lw, 1, rng, "critic.head"),
    )
    return gen, critic


def _one_hot_argmax(logits: np.ndarray) -> np.ndarray:
    out = np.zeros_like(logits)
    out[np.arange(len(logits)), np.argmax(logits, axis=1)] = 1.0  # ties -> lowest index
    return out


def generator_forward(
    z,
    gen: GeneratorParams,
    rng: np.random.Generator | None = None,
    mode: str = "soft",
) -> Node:
    """Map latent rows to encoded rows of width ``l_w``.

    ``mode``:
      * ``"soft"`` -- Gumbel-softmax relaxation, differentiable (training);
      * ``"hard"`` -- noise-free argmax one-hot of the logits (ties -> lowest index);
      * ``"sample"`` -- one-hot of ``argmax(logits + gumbel)``, an exact draw
        from ``softmax(logits)``.
    """
    z = ad._as_node(z)
    if z.value.ndim != 2 or z.shape[1] != gen.width:
        raise DimensionError(f"generator: expected latent width {gen.width}, got shape {z.shape}")
    if mode not in ("soft", "hard", "sample"):
        raise ValueError(f"unknown generator mode {mode!r}")
    if mode != "hard" and rng is None:
        raise ValueError(f"generator mode {mode!r} needs an rng")

    h1 = ad.relu(gen.hidden(z))
    parts = []
    if gen.numeric is not None:
        parts.append(ad.relu(gen.numeric(h1)))
    for head in gen.categorical:
        logits = head(h1)
        if mode == "soft":
            noise = ad.gumbel_noise(logits.shape, rng)
            parts.append(ad.softmax(ad.add(logits, Node(noise)), gen.tau))
        elif mode == "sample":
            parts.append(Node(_one_hot_argmax(logits.value + ad.gumbel_noise(logits.shape, rng))))
        else:
            parts.append(Node(_one_hot_argmax(logits.value)))
    return ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]


def critic_forward(x, critic: CriticParams) -> Node:
    """Unbounded Wasserstein critic scores, shape ``(batch, 1)``."""
    x = ad._as_node(x)
    if x.value.ndim != 2 or x.shape[1] != critic.width:
        raise DimensionError(f"critic: expected width {critic.width}, got shape {x.shape}")
    h1 = ad.leaky_relu(critic.layer1(x), LEAKY_SLOPE)
    h2 = ad.leaky_relu(critic.layer2(h1), LEAKY_SLOPE)
    return critic.head(h2)


def save_params(path: str | Path, gen: GeneratorParams, critic: CriticParams, meta: dict | None = None) -> None:
    """Write both networks to one ``.npz`` archive (bit-exact float64 arrays)."""
    arrays = {
        "__format__": np.array(PARAMS_FORMAT),
        "__version__": np.array(PARAMS_VERSION),
        "__tau__": np.array(gen.tau),
        "__n_categorical__": np.array(len(gen.categorical)),
        "__meta__": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for prefix, net in (("gen", gen), ("critic", critic)):
        for name, layer in net.layers():
            arrays[f"{prefix}/{name}/weight"] = layer.weight.value
            arrays[f"{prefix}/{name}/bias"] = layer.bias.value
    # np.savez stamps entries with the wall clock; fixed timestamps keep reruns byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_params(path: str | Path) -> tuple[GeneratorParams, CriticParams, dict]:
    with np.load(path, allow_pickle=False) as data:
        if str(data["__format__"]) != PARAMS_FORMAT:
            raise ValueError(f"{path}: not a parameter file")
        if int(data["__version__"]) != PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported parameter version {int(data['__version__'])}")

        def dense(key: str) -> Dense:
            return Dense(
                ad.parameter(data[f"{key}/weight"], f"{key}.weight"),
                ad.parameter(data[f"{key}/bias"], f"{key}.bias"),
            )

        numeric = dense("gen/numeric") if "gen/numeric/weight" in data.files else None
        n_cat = int(data["__n_categorical__"])
        gen = GeneratorParams(
            hidden=dense("gen/hidden"),
            numeric=numeric,
            categorical=[dense(f"gen/categorical{i}") for i in range(n_cat)],
            tau=float(data["__tau__"]),
        )
        critic = CriticParams(dense("critic/layer1"), dense("critic/layer2"), dense("critic/head"))
        meta = json.loads(str(data["__meta__"]))
    return gen, critic, meta
