import sys
from pathlib import Path

# Make the exporter package (repo root) importable alongside the installed
# vidcut package.
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
