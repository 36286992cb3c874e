"""Shared fixtures: small synthetic maps and tiny network configs."""

import numpy as np
import pytest

from skirmish.mapdef import MapDef, Obstacle, SpawnRegion, load_bundled, validate_map
from skirmish.net import NetConfig


def rect_obstacle(cx, cy, w, h, height):
    return Obstacle(
        vertices=(
            (cx - w / 2, cy - h / 2),
            (cx + w / 2, cy - h / 2),
            (cx + w / 2, cy + h / 2),
            (cx - w / 2, cy + h / 2),
        ),
        height=height,
    )


@pytest.fixture(scope="session")
def farm_map():
    return load_bundled("farm_small")


@pytest.fixture
def walled_map():
    """30x20 arena with one tall central wall and a low crate; two regions."""
    m = MapDef(
        width=30.0,
        height=20.0,
        obstacles=(
            rect_obstacle(15.0, 10.0, 1.0, 8.0, 2.5),  # tall central wall
            rect_obstacle(7.0, 5.0, 2.0, 2.0, 1.9),  # region-0 cover
            rect_obstacle(23.0, 15.0, 2.0, 2.0, 1.9),  # region-1 cover
            rect_obstacle(10.0, 15.0, 3.0, 1.0, 1.0),  # low crate (crouch cover)
        ),
        spawn_regions=(SpawnRegion(2.0, 2.0, 10.0, 8.0), SpawnRegion(18.0, 11.0, 10.0, 8.0)),
        name="walled",
    )
    return validate_map(m)


@pytest.fixture
def open_map():
    """No tall cover inside the single region (spawn_pair must fail)."""
    return MapDef(
        width=20.0,
        height=20.0,
        obstacles=(rect_obstacle(10.0, 10.0, 2.0, 2.0, 0.5),),  # too low to hide behind
        spawn_regions=(SpawnRegion(2.0, 2.0, 16.0, 16.0),),
        name="open",
    )


@pytest.fixture(scope="session")
def tiny_net_config():
    return NetConfig(
        basic_dim=4,
        opponent_dim=3,
        env_dim=4,
        depth_shape=(8, 10),
        depth_kernels=(3, 3),
        depth_strides=(2, 1),
        depth_channels=(2, 3),
        lidar_shape=(12, 3),
        lidar_kernel=3,
        lidar_channels=(2, 2),
        scalar_hidden=6,
        scalar_out=5,
        depth_out=6,
        lidar_out=4,
        fusion_out=8,
        lstm_hidden=7,
        head_embed_dim=4,
        seed=1,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
