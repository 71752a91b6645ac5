import logging

import pytest

from sellpoint.numeric import substream
from sellpoint.training import sample_negatives_ad, sample_negatives_sf
from sellpoint.world import WorldConfig, generate_ad_dataset, generate_sf_dataset, generate_world

logging.getLogger("sellpoint").setLevel(logging.ERROR)


TINY_WORLD_CONFIG = WorldConfig(
    n_users=120, n_keywords=400, n_categories=8, n_ads=150, n_brands=30,
    n_sp_phrases=240, seed=7)


@pytest.fixture(scope="session")
def tiny_world():
    return generate_world(TINY_WORLD_CONFIG)


@pytest.fixture(scope="session")
def tiny_datasets(tiny_world):
    imps = generate_sf_dataset(tiny_world, 800, substream(7, "tests/sf"))
    sessions = generate_ad_dataset(tiny_world, 300, substream(7, "tests/ad"))
    sf = sample_negatives_sf(imps, 2, substream(7, "tests/negsf"))
    ad = sample_negatives_ad(sessions, 6, substream(7, "tests/negad"))
    return {"impressions": imps, "sessions": sessions, "sf": sf, "ad": ad}
