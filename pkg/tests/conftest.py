from pathlib import Path

import pytest

from droidaudit import sigtable

FIXTURES = Path(__file__).parent / "fixtures"


def golden_buffer() -> bytes:
    """The 200-byte SMS transaction buffer, transcribed from its hexdump."""
    return bytes.fromhex((FIXTURES / "sms_buffer.hex").read_text())


@pytest.fixture
def golden() -> bytes:
    return golden_buffer()


@pytest.fixture
def sample_table() -> sigtable.SignatureTable:
    return sigtable.load_sample_table()


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES
