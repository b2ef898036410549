"""Shared fixtures: a small three-city artifact tree built once per session."""

import pytest

from urbanpref import cli

MICRO_INI = """
[pipeline]
seed = 7
out = {out}

[corpus]
image_px = 96
sv_fraction = 0.64
cell_m = 200
extent_m = 1200

[city:alpha]
lat = 45.05
lon = 7.66
texture_seed = 11
mix = green:0.9, water:0.1

[city:beta]
lat = 40.42
lon = -3.70
texture_seed = 23
mix = built_high:0.6, built_low:0.3, road:0.1

[city:gamma]
lat = 38.72
lon = -9.14
texture_seed = 37
mix = water:0.5, green:0.3, built_low:0.2

[tsne]
perplexity = 8
iters = 250

[som]
rows = 4
cols = 4
iters = 3000
linear_cells = 64
linear_iters = 800

[clusters]
k = 8

[survey]
n_pairs = 28
min_appearances = 3

[classifier]
target = 56
max_epochs = 40

[atlas]
block = 8
specific_rows = 10
specific_cols = 10
specific_iters = 1500
"""


def write_micro_ini(path, out_dir):
    path.write_text(MICRO_INI.format(out=out_dir))
    return path


@pytest.fixture(scope="session")
def micro_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro")
    out = root / "tree"
    ini = write_micro_ini(root / "micro.ini", out)
    assert cli.main(["run-all", "--synthetic-rater", "--config", str(ini)]) == 0
    return ini, out
