import pytest

from helpers import hotel_schema, wide_schema


@pytest.fixture
def schema():
    return hotel_schema()


@pytest.fixture
def big_schema():
    return wide_schema()
