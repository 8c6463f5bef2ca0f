import sys
from pathlib import Path

# allow `import oracles` from any pytest rootdir
sys.path.insert(0, str(Path(__file__).parent))
