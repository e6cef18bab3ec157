import numpy as np
import pytest
from hypothesis import settings

import shrinklab as sl
from shrinklab.nn import LinearLayer, Mlp, MlpParams

settings.register_profile("ci", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("ci")


def make_identity_params(dim: int) -> MlpParams:
    """Exact identity encoder/decoder via the ReLU split x = relu(x) - relu(-x).

    Layer 1 maps x to [x+, x-] (hidden = 2*dim), layer 2 is the identity on the
    nonnegative hidden vector, layer 3 recombines. Exact for every input.
    """
    eye = np.eye(dim)
    split = np.vstack([eye, -eye])  # (2d, d)
    merge = np.hstack([eye, -eye])  # (d, 2d)
    zeros2d = np.zeros(2 * dim)

    def stack() -> Mlp:
        return Mlp([
            LinearLayer(split.copy(), zeros2d.copy()),
            LinearLayer(np.eye(2 * dim), zeros2d.copy()),
            LinearLayer(merge.copy(), np.zeros(dim)),
        ])

    return MlpParams(encoder=stack(), decoder=stack(), hidden_dim=2 * dim)


@pytest.fixture
def small_spec() -> sl.GaussianMixtureSpec:
    return sl.GaussianMixtureSpec(
        num_components=4, points_per_component=60, dim=2,
        means=sl.default_means(4, 2, 5.0), std=1.0, seed=7,
    )


@pytest.fixture
def small_dataset(small_spec) -> sl.LabeledDataset:
    return sl.generate(small_spec)


@pytest.fixture(scope="session")
def reference_tree(tmp_path_factory):
    """Artifacts of the bundled reference plan (the expensive shared fixture)."""
    from shrinklab.cli import cmd_run, load_plan

    out_dir = str(tmp_path_factory.mktemp("reference") / "tree")
    status = cmd_run("reproduce_fig2", seed_list=None, out_dir=out_dir, check=False)
    assert status == 0, "reference plan did not complete"
    return out_dir, load_plan("reproduce_fig2", out_dir=out_dir)
