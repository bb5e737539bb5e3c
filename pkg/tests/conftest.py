import pytest

from metachain import crypto


@pytest.fixture(scope="session")
def keystore() -> crypto.KeyStore:
    return crypto.KeyStore(seed=1234)
