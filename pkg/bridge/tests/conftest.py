import pytest

from encoder_bridge import BridgeConfig, create_app, load_encoder
from encoder_bridge.testing import save_toy_checkpoint


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory):
    return save_toy_checkpoint(tmp_path_factory.mktemp("ckpt") / "toy.pt")


@pytest.fixture(scope="session")
def loaded_app(toy_checkpoint):
    app = create_app(BridgeConfig(checkpoint=toy_checkpoint))
    load_encoder(app)
    return app
