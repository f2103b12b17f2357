import pytest
from hypothesis import settings

from kvtier.core import ModelShape, SparseConfig, TierParams, validate_config

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_config(L=1, H=1, d=128, e=2, n_max=4096, budget=64, g=8, page=8, alpha=0.125, update=256,
                device=1 << 26, host=1 << 30, bw_hbm=2e12, bw_pcie=32e9, t_mlp=0.0, latency=0.0):
    return validate_config(
        ModelShape(L, H, d, e, n_max),
        SparseConfig(budget, g, page, alpha, update),
        TierParams(device, host, bw_hbm, bw_pcie, t_mlp, latency),
    )


@pytest.fixture
def small_config():
    return make_config()
