"""Deterministic micro-checkpoint generator.

Produces a base model plus two perturbed parents with the grouped-query
geometry of the full-size model family, small enough to verify every merge
property at desk scale. The manifest records the exact float32 deltas the
generator applied and the head permutation planted in parent B, so tests
can reconstruct both parents bit for bit.

Parents are post-processed so that every per-element delta is exactly
representable: wherever float32 subtraction of parent minus base would
round, the parent element is snapped back to the base value. This affects
a ~1e-5 fraction of elements and makes identities like
"base + delta == parent" hold with zero error.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..checkpoint import Checkpoint, TensorRecord, save_checkpoint
from ..dtypes import BF16, F32, encode_from_f32
from ..errors import ParameterError

MISTRAL_MICRO = "mistral-micro"


@dataclass(frozen=True)
class ToyPreset:
    layers: int = 4
    hidden: int = 64
    q_heads: int = 8
    kv_heads: int = 2
    head_dim: int = 8
    vocab: int = 256
    seed: int = 0

    def __post_init__(self):
        if min(self.layers, self.hidden, self.q_heads, self.kv_heads,
               self.head_dim, self.vocab) < 1:
            raise ParameterError(f"preset extents must be positive: {self}")
        if self.hidden != self.q_heads * self.head_dim:
            raise ParameterError(
                f"hidden ({self.hidden}) must equal q_heads x head_dim "
                f"({self.q_heads} x {self.head_dim})"
            )
        if self.q_heads % self.kv_heads != 0:
            raise ParameterError(
                f"q_heads ({self.q_heads}) must be divisible by kv_heads ({self.kv_heads})"
            )

    @property
    def kv_extent(self) -> int:
        return self.kv_heads * self.head_dim

    @property
    def intermediate(self) -> int:
        return 2 * self.hidden


@dataclass
class ToyManifest:
    preset: ToyPreset
    deltas_a: dict[str, np.ndarray] = field(default_factory=dict)
    deltas_b: dict[str, np.ndarray] = field(default_factory=dict)
    planted: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def reconstruct_parent(self, base: Checkpoint, which: str) -> Checkpoint:
        """base + recorded deltas, narrowed to each tensor's storage dtype."""
        deltas = self.deltas_a if which == "a" else self.deltas_b
        records = []
        for name in base.names():
            values = base[name].to_f32_array() + deltas[name]
            records.append(TensorRecord.from_f32_array(name, values, base[name].dtype))
        return Checkpoint(records, metadata=dict(base.metadata))


def tensor_plan(preset: ToyPreset) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, dtype) for every tensor, mirroring the common naming scheme."""
    plan = [
        ("model.embed_tokens.weight", (preset.vocab, preset.hidden), BF16),
        ("lm_head.weight", (preset.vocab, preset.hidden), BF16),
        ("model.norm.weight", (preset.hidden,), F32),
    ]
    for i in range(preset.layers):
        prefix = f"model.layers.{i}"
        plan += [
            (f"{prefix}.self_attn.q_proj.weight", (preset.hidden, preset.hidden), BF16),
            (f"{prefix}.self_attn.k_proj.weight", (preset.kv_extent, preset.hidden), BF16),
            (f"{prefix}.self_attn.v_proj.weight", (preset.kv_extent, preset.hidden), BF16),
            (f"{prefix}.self_attn.o_proj.weight", (preset.hidden, preset.hidden), BF16),
            (f"{prefix}.mlp.gate_proj.weight", (preset.intermediate, preset.hidden), BF16),
            (f"{prefix}.mlp.up_proj.weight", (preset.intermediate, preset.hidden), BF16),
            (f"{prefix}.mlp.down_proj.weight", (preset.hidden, preset.intermediate), BF16),
            (f"{prefix}.input_layernorm.weight", (preset.hidden,), F32),
            (f"{prefix}.post_attention_layernorm.weight", (preset.hidden,), F32),
        ]
    return sorted(plan)


def _narrow_widen(values: np.ndarray, dtype: str) -> np.ndarray:
    """Round float32 values onto the storage dtype's grid."""
    rec = TensorRecord.from_f32_array("x", values.astype(np.float32), dtype)
    return rec.to_f32_array()


def _snap_exact_deltas(base32: np.ndarray, parent32: np.ndarray) -> np.ndarray:
    """Replace parent elements whose delta would not be float32-exact.

    Exactness is checked in float64: the float32 difference must equal the
    float64 difference, and adding it back must reproduce the parent.
    """
    d32 = parent32 - base32
    b64 = base32.astype(np.float64)
    p64 = parent32.astype(np.float64)
    d64 = d32.astype(np.float64)
    ok = (p64 - b64 == d64) & (b64 + d64 == p64)
    if ok.all():
        return parent32
    out = parent32.copy()
    out[~ok] = base32[~ok]
    return out


def _plant_permutation(values: np.ndarray, num_heads: int, head_dim: int,
                       sigma: np.ndarray) -> np.ndarray:
    """Scatter row slab i into slab sigma[i] (row-split projections only)."""
    slabs = values.reshape(num_heads, head_dim, -1)
    out = np.empty_like(slabs)
    for src, dst in enumerate(sigma):
        out[dst] = slabs[src]
    return out.reshape(values.shape)


def gen_toy_trio(preset: ToyPreset):
    """Returns (base, parent_a, parent_b, manifest), all deterministic in the seed."""
    rng = np.random.default_rng(preset.seed)
    plan = tensor_plan(preset)

    base_records = {}
    for name, shape, dtype in plan:
        if name.endswith("layernorm.weight") or name == "model.norm.weight":
            raw = 1.0 + 0.1 * rng.standard_normal(shape)
        else:
            raw = rng.standard_normal(shape)
        base32 = _narrow_widen(raw.astype(np.float32), dtype)
        base_records[name] = TensorRecord.from_f32_array(name, base32, dtype)
    base = Checkpoint(base_records.values())

    manifest = ToyManifest(preset)
    parents = {}
    for which in ("a", "b"):
        records = []
        for name, shape, dtype in plan:
            base32 = base[name].to_f32_array()
            scale = 0.01 * float(base32.std())
            delta = (scale * rng.standard_normal(shape)).astype(np.float32)
            parent32 = _narrow_widen(base32 + delta, dtype)
            if which == "b" and ".self_attn.q_proj.weight" in name:
                sigma = rng.permutation(preset.q_heads)
                parent32 = _plant_permutation(parent32, preset.q_heads,
                                              preset.head_dim, sigma)
                manifest.planted[name] = tuple(int(s) for s in sigma)
            parent32 = _snap_exact_deltas(base32, parent32)
            records.append(TensorRecord.from_f32_array(name, parent32, dtype))
        parents[which] = Checkpoint(records)

    for which, parent in parents.items():
        deltas = manifest.deltas_a if which == "a" else manifest.deltas_b
        for name in base.names():
            deltas[name] = parent[name].to_f32_array() - base[name].to_f32_array()
        rebuilt = manifest.reconstruct_parent(base, which)
        assert rebuilt == parent, f"manifest does not reconstruct parent {which}"

    return base, parents["a"], parents["b"], manifest


def manifest_to_json(manifest: ToyManifest) -> str:
    def pack(deltas):
        return {
            name: {
                "shape": list(arr.shape),
                "data_b64": base64.b64encode(
                    encode_from_f32(arr, F32)).decode("ascii"),
            }
            for name, arr in sorted(deltas.items())
        }

    doc = {
        "preset": {
            "layers": manifest.preset.layers,
            "hidden": manifest.preset.hidden,
            "q_heads": manifest.preset.q_heads,
            "kv_heads": manifest.preset.kv_heads,
            "head_dim": manifest.preset.head_dim,
            "vocab": manifest.preset.vocab,
            "seed": manifest.preset.seed,
        },
        "planted": {name: list(perm) for name, perm in sorted(manifest.planted.items())},
        "deltas": {"parent_a": pack(manifest.deltas_a), "parent_b": pack(manifest.deltas_b)},
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def manifest_from_json(text: str) -> ToyManifest:
    doc = json.loads(text)
    manifest = ToyManifest(ToyPreset(**doc["preset"]))
    manifest.planted = {name: tuple(perm) for name, perm in doc["planted"].items()}
    for which, target in (("parent_a", manifest.deltas_a), ("parent_b", manifest.deltas_b)):
        for name, entry in doc["deltas"][which].items():
            data = base64.b64decode(entry["data_b64"])
            target[name] = np.frombuffer(data, dtype="<f4").reshape(entry["shape"]).copy()
    return manifest


def write_toy_dir(preset: ToyPreset, out_dir) -> dict[str, Path]:
    """Generate a trio and write base/parent_a/parent_b archives plus manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base, parent_a, parent_b, manifest = gen_toy_trio(preset)
    paths = {
        "base": out_dir / "base.safetensors",
        "parent_a": out_dir / "parent_a.safetensors",
        "parent_b": out_dir / "parent_b.safetensors",
        "manifest": out_dir / "manifest.json",
    }
    save_checkpoint(base, paths["base"])
    save_checkpoint(parent_a, paths["parent_a"])
    save_checkpoint(parent_b, paths["parent_b"])
    paths["manifest"].write_text(manifest_to_json(manifest), "utf-8")
    return paths
