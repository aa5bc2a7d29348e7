import pytest

from modelmerge.testkit.toygen import ToyPreset, gen_toy_trio, write_toy_dir


@pytest.fixture(scope="session")
def toy_trio():
    """(base, parent_a, parent_b, manifest) for the default micro preset."""
    return gen_toy_trio(ToyPreset(seed=0))


@pytest.fixture(scope="session")
def toy_paths(tmp_path_factory):
    """The same trio written to disk once per session."""
    out = tmp_path_factory.mktemp("toy")
    return write_toy_dir(ToyPreset(seed=0), out)


def make_recipe_text(method, paths, out_path, *, seed=7, alpha=None, density=None,
                     epsilon=None, gamma=None, output_dtype=None, report=None):
    lines = [
        f"method = {method}",
        f"seed = {seed}",
        f"base = {paths['base']}",
        f"parent_a = {paths['parent_a']}",
        f"parent_b = {paths['parent_b']}",
        f"output = {out_path}",
    ]
    if alpha is not None:
        lines.append(f"alpha = {alpha}")
    if density is not None:
        lines.append(f"density = {density}")
    if epsilon is not None:
        lines.append(f"epsilon = {epsilon}")
    if gamma is not None:
        lines.append(f"gamma = {gamma}")
    if output_dtype is not None:
        lines.append(f"output_dtype = {output_dtype}")
    if report is not None:
        lines.append(f"report = {report}")
    lines += ["[attention]", "heads.q = 8", "heads.kv = 2", "head_dim = 8"]
    return "\n".join(lines) + "\n"
