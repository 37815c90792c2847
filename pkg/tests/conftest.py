import pytest

from mvlab import fpe


@pytest.fixture(scope="session", autouse=True)
def _suite_clip_budget():
    """Every FPE solve anywhere in the suite shares one clipping budget."""
    yield
    total = fpe.total_clipped_mass()
    assert total <= 1e-6, f"suite-wide clipped mass {total:.3e} exceeds 1e-6"
