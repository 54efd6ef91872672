import pytest

from regemb.numkernel import set_precision


@pytest.fixture(autouse=True)
def default_precision():
    """Tests run in float64 unless they opt into float32 themselves."""
    set_precision("float64")
    yield
    set_precision("float64")
