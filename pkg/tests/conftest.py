import pytest

from trisent import tensor as T


@pytest.fixture(autouse=True)
def _clean_tensor_state():
    """Debug numerics on for every test; leave no tape residue behind."""
    T.set_debug_checks(True)
    yield
    T.set_debug_checks(False)
    T.active_tape().reset()
