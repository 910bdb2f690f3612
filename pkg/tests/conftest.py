import json

import pytest

from pvm.config import parse_config, topology_for


def make_config(**overrides):
    """Small three-layer config used throughout the module tests."""
    raw = {
        "name": "test-16",
        "frame_width": 16,
        "frame_height": 16,
        "tile_size": 4,
        "layer_grids": [[4, 4], [2, 2], [1, 1]],
        "hidden_size": 8,
        "heatmap_size": 4,
        "readout_patch_sizes": [1, 2, 4],
        "readout_canvas_sizes": [4, 4, 4],
        "settle_steps": 1,
        "seed": 1000,
        "schedule": {
            "layer_enable_steps": [0, 0, 0],
            "lateral_enable_step": 0,
            "feedback_enable_step": 0,
        },
    }
    raw.update(overrides)
    config, synth = parse_config(json.dumps(raw))
    return config, synth


@pytest.fixture
def small_config():
    config, _ = make_config()
    return config


@pytest.fixture
def small_topology(small_config):
    return topology_for(small_config)
