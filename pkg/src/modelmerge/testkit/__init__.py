"""Deterministic toy-checkpoint generator and independent brute-force oracles."""

from .assignment import brute_force_assignment
from .reference import reference_merge
from .toygen import (
    ToyManifest,
    ToyPreset,
    gen_toy_trio,
    manifest_from_json,
    manifest_to_json,
    tensor_plan,
    write_toy_dir,
)
