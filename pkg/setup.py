from pathlib import Path

from setuptools import find_packages, setup

ROOT = Path(__file__).parent


def read_requirements():
    lines = (ROOT / "requirements.txt").read_text().splitlines()
    return [line.strip() for line in lines if line.strip() and not line.startswith("#")]


setup(
    name="deconvmode",
    description="Conditional mode estimation with an error-prone covariate",
    packages=find_packages(include=["deconvmode", "deconvmode.*"]),
    version=(ROOT / "version.txt").read_text().strip(),
    python_requires=">=3.9",
    install_requires=read_requirements(),
    long_description=(ROOT / "README.md").read_text(),
    long_description_content_type="text/markdown",
    entry_points={"console_scripts": ["deconvmode = deconvmode.cli:main"]},
)
