import subprocess
import sys

import pytest

TINY_PLAN = """\
[plan]
seeds = 0
out_dir = {out}

[run:ae]
regime = ae_pretrain
epochs = 3
data_dim = 2
num_components = 4
points_per_component = 50
batch_size = 32
hidden_dim = 8

[run:baseline]
regime = baseline_vq
epochs = 3
data_dim = 2
num_components = 4
points_per_component = 50
batch_size = 32
hidden_dim = 8
codebook_size = 8
embed_ratio = 2.0

[run:deferred]
regime = deferred_vq
pretrain = ae
epochs = 3
data_dim = 2
num_components = 4
points_per_component = 50
batch_size = 32
hidden_dim = 8
codebook_size = 8
embed_ratio = 2.0
"""


@pytest.fixture(scope="session")
def artifact_tree(tmp_path_factory):
    """A small real artifact tree, produced through the shrinklab CLI only."""
    tmp = tmp_path_factory.mktemp("artifacts")
    out_dir = tmp / "tree"
    plan = tmp / "plan.ini"
    plan.write_text(TINY_PLAN.format(out=out_dir))
    proc = subprocess.run([sys.executable, "-m", "shrinklab", "run", str(plan)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out_dir
