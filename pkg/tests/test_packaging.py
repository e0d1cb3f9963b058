import re
import unittest
from pathlib import Path

from deconvmode import cli

ROOT = Path(__file__).resolve().parent.parent


class TestPackaging(unittest.TestCase):

    def test_requirements_cover_imported_stack(self):
        names = {
            re.split(r"[=<>\[ ]", line.strip())[0]
            for line in (ROOT / "requirements.txt").read_text().splitlines()
            if line.strip() and not line.startswith("#")
        }
        for package in ("torch", "numpy", "scipy", "pandas", "pydantic", "tqdm"):
            with self.subTest(package=package):
                self.assertIn(package, names)

    def test_version(self):
        self.assertRegex((ROOT / "version.txt").read_text().strip(), r"^\d+\.\d+\.\d+$")

    def test_console_script_target(self):
        setup_text = (ROOT / "setup.py").read_text()
        self.assertIn("deconvmode = deconvmode.cli:main", setup_text)
        self.assertTrue(callable(cli.main))


if __name__ == "__main__":
    unittest.main(verbosity=2)
