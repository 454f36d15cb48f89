import pytest

from panelclim.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def panel_m5():
    return generate(SynthConfig(seed=3, spec="m5"))


@pytest.fixture(scope="session")
def panel_m1():
    return generate(SynthConfig(seed=4, spec="m1"))


@pytest.fixture(scope="session")
def raw_store(tmp_path_factory):
    """Raw synthetic inputs pushed through ingest and features."""
    from panelclim import features, ingest
    from panelclim.synth import generate_raw

    root = tmp_path_factory.mktemp("raw")
    generate_raw(SynthConfig(seed=11, spec="m5"), root)
    store = root / "store"
    ingest.ingest_to_store(store, root / "stations.csv", root / "econ.csv", root / "indices.csv",
                           root / "rcp.csv", root / "events.csv")
    features.build_features(store)
    return root, store
