from fractions import Fraction

import pytest

from roughmetric.fields import build_hierarchy, build_rational_cover, ex1_field, ex2_field, ex3_field


@pytest.fixture(scope="session")
def cover_line():
    return build_rational_cover(Fraction(1, 16), 24, "line")


@pytest.fixture(scope="session")
def cover_unit():
    return build_rational_cover(Fraction(1, 16), 24, "unit_interval")


@pytest.fixture(scope="session")
def hier():
    return build_hierarchy(3, 1.0, 4)


@pytest.fixture(scope="session")
def ex1(cover_line):
    return ex1_field(cover_line, 2)


@pytest.fixture(scope="session")
def ex2(cover_unit):
    return ex2_field(cover_unit, 2)


@pytest.fixture(scope="session")
def ex3(hier):
    return ex3_field(hier)


ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    def log(tag: str, ok: bool, detail: str):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
