"""Merge recipes: the hyperparameter set plus the line-oriented recipe file.

Recipe files are flat ``key = value`` text with one optional ``[attention]``
section. Unknown keys and out-of-range parameters are rejected at parse
time, before any file is written (fail-closed). ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .dtypes import SUPPORTED_DTYPES
from .errors import RecipeError
from .heads import COLUMNS, ROWS, HeadLayout

METHODS = (
    "linear_average",
    "task_arithmetic",
    "dare_ties",
    "della",
    "breadcrumbs",
    "hierarchical",
)

# Table defaults: balanced interpolation, the published pruning settings.
DEFAULT_ALPHA = 0.5
DEFAULT_DENSITY = {"dare_ties": 0.6, "della": 0.6, "breadcrumbs": 0.9}
DEFAULT_EPSILON = 0.05
DEFAULT_GAMMA = 0.01

DEFAULT_PATTERNS = {
    "q": r"\.self_attn\.q_proj\.weight$",
    "k": r"\.self_attn\.k_proj\.weight$",
    "v": r"\.self_attn\.v_proj\.weight$",
    "o": r"\.self_attn\.o_proj\.weight$",
}

_TOP_KEYS = {
    "method", "alpha", "density", "epsilon", "gamma", "seed",
    "base", "parent_a", "parent_b", "output", "output_dtype", "report",
}
_ATTN_KEYS = {"pattern.q", "pattern.k", "pattern.v", "pattern.o",
              "heads.q", "heads.kv", "head_dim"}


@dataclass(frozen=True)
class AttentionSpec:
    """Name-matching rules and head geometry for the four attention projections.

    Q and O use the full head count; K and V use the key/value head count.
    Q/K/V split along output rows, O along input columns.
    """

    patterns: tuple[tuple[str, re.Pattern], ...]
    heads_q: int | None = None
    heads_kv: int | None = None
    head_dim: int | None = None

    def layout_for(self, kind: str) -> HeadLayout:
        if self.heads_q is None or self.heads_kv is None or self.head_dim is None:
            raise RecipeError("attention head geometry (heads.q, heads.kv, head_dim) "
                              "is required for head alignment")
        if kind == "q":
            return HeadLayout(self.heads_q, self.head_dim, ROWS)
        if kind in ("k", "v"):
            return HeadLayout(self.heads_kv, self.head_dim, ROWS)
        if kind == "o":
            return HeadLayout(self.heads_q, self.head_dim, COLUMNS)
        raise RecipeError(f"unknown attention projection kind {kind!r}")


def default_attention_spec(heads_q=None, heads_kv=None, head_dim=None) -> AttentionSpec:
    pats = tuple((k, re.compile(DEFAULT_PATTERNS[k])) for k in ("q", "k", "v", "o"))
    return AttentionSpec(pats, heads_q, heads_kv, head_dim)


@dataclass(frozen=True)
class MergeRecipe:
    """Method selector plus every hyperparameter consumed by the kernels."""

    method: str
    alpha: float = DEFAULT_ALPHA
    density: float = 1.0
    epsilon: float = DEFAULT_EPSILON
    gamma: float = DEFAULT_GAMMA
    seed: int = 0
    output_dtype: str | None = None
    attention: AttentionSpec = field(default_factory=default_attention_spec)

    def __post_init__(self):
        validate_params(self.method, self.alpha, self.density, self.epsilon,
                        self.gamma, self.seed, self.output_dtype)


@dataclass(frozen=True)
class RecipeFile:
    """A parsed recipe file: paths plus the embedded MergeRecipe."""

    recipe: MergeRecipe
    base: str
    parent_a: str
    parent_b: str
    output: str
    report: str | None = None


def validate_params(method, alpha, density, epsilon, gamma, seed, output_dtype) -> None:
    if method not in METHODS:
        raise RecipeError(f"unknown method {method!r}; expected one of {METHODS}")
    if not 0.0 <= alpha <= 1.0:
        raise RecipeError(f"alpha must be in [0, 1], got {alpha}")
    if not 0.0 < density <= 1.0:
        raise RecipeError(f"density must be in (0, 1], got {density}")
    if epsilon < 0.0:
        raise RecipeError(f"epsilon must be >= 0, got {epsilon}")
    if not 0.0 <= gamma < 1.0:
        raise RecipeError(f"gamma must be in [0, 1), got {gamma}")
    if not 0 <= seed < 2**64:
        raise RecipeError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if method == "della":
        if not density < 1.0:
            raise RecipeError("della requires density strictly below 1")
        if not epsilon < min(density, 1.0 - density):
            raise RecipeError(
                f"della requires epsilon < min(density, 1 - density); "
                f"got epsilon={epsilon}, density={density}"
            )
    if method == "breadcrumbs" and density + gamma > 1.0:
        raise RecipeError(f"breadcrumbs requires density + gamma <= 1, "
                          f"got {density} + {gamma}")
    if output_dtype is not None and output_dtype not in SUPPORTED_DTYPES:
        raise RecipeError(f"output_dtype must be one of {SUPPORTED_DTYPES}, "
                          f"got {output_dtype!r}")


def _parse_lines(text: str):
    """Yield (section, key, value, line_no) for each assignment."""
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section != "attention":
                raise RecipeError(f"line {line_no}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise RecipeError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        yield section, key, value, line_no


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise RecipeError(f"{key} must be a number, got {value!r}") from None


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise RecipeError(f"{key} must be an integer, got {value!r}") from None


def parse_recipe_text(text: str, source: str = "<recipe>") -> RecipeFile:
    top: dict[str, str] = {}
    attn: dict[str, str] = {}
    for section, key, value, line_no in _parse_lines(text):
        bucket, allowed = (attn, _ATTN_KEYS) if section == "attention" else (top, _TOP_KEYS)
        if key not in allowed:
            raise RecipeError(f"{source} line {line_no}: unknown key {key!r}")
        if key in bucket:
            raise RecipeError(f"{source} line {line_no}: duplicate key {key!r}")
        bucket[key] = value

    if "method" not in top:
        raise RecipeError(f"{source}: missing required key 'method'")
    method = top["method"]
    if method not in METHODS:
        raise RecipeError(f"{source}: unknown method {method!r}; expected one of {METHODS}")

    alpha = _to_float("alpha", top["alpha"]) if "alpha" in top else DEFAULT_ALPHA
    density = (_to_float("density", top["density"]) if "density" in top
               else DEFAULT_DENSITY.get(method, 1.0))
    epsilon = _to_float("epsilon", top["epsilon"]) if "epsilon" in top else DEFAULT_EPSILON
    gamma = _to_float("gamma", top["gamma"]) if "gamma" in top else DEFAULT_GAMMA
    seed = _to_int("seed", top["seed"]) if "seed" in top else 0
    output_dtype = top.get("output_dtype")

    patterns = []
    for kind in ("q", "k", "v", "o"):
        pattern_text = attn.get(f"pattern.{kind}", DEFAULT_PATTERNS[kind])
        try:
            patterns.append((kind, re.compile(pattern_text)))
        except re.error as exc:
            raise RecipeError(f"{source}: pattern.{kind} is not a valid regex: {exc}") from None
    heads_q = _to_int("heads.q", attn["heads.q"]) if "heads.q" in attn else None
    heads_kv = _to_int("heads.kv", attn["heads.kv"]) if "heads.kv" in attn else None
    head_dim = _to_int("head_dim", attn["head_dim"]) if "head_dim" in attn else None
    for label, count in (("heads.q", heads_q), ("heads.kv", heads_kv), ("head_dim", head_dim)):
        if count is not None and count < 1:
            raise RecipeError(f"{source}: {label} must be a positive integer, got {count}")

    if method == "hierarchical":
        missing = [k for k, v in (("heads.q", heads_q), ("heads.kv", heads_kv),
                                  ("head_dim", head_dim)) if v is None]
        if missing:
            raise RecipeError(f"{source}: hierarchical merging requires [attention] keys "
                              f"{missing}")
    if top.get("report") and method != "hierarchical":
        raise RecipeError(f"{source}: 'report' is only produced by the hierarchical method")

    recipe = MergeRecipe(
        method=method, alpha=alpha, density=density, epsilon=epsilon, gamma=gamma,
        seed=seed, output_dtype=output_dtype,
        attention=AttentionSpec(tuple(patterns), heads_q, heads_kv, head_dim),
    )

    missing_paths = [k for k in ("base", "parent_a", "parent_b", "output") if k not in top]
    if missing_paths:
        raise RecipeError(f"{source}: missing required path keys {missing_paths}")
    return RecipeFile(
        recipe=recipe,
        base=top["base"], parent_a=top["parent_a"], parent_b=top["parent_b"],
        output=top["output"], report=top.get("report"),
    )


def load_recipe(path) -> RecipeFile:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        raise RecipeError(f"cannot read recipe {path}: {exc}") from None
    return parse_recipe_text(text, source=str(path))
