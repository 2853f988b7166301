"""
The command-line tool
=====================

Every computation above is also available as ``perpscale <command>``.
Each command writes its outputs plus a manifest that can be replayed.
This script drives the same entry point from Python.
"""

# %%
import json
import sys
from pathlib import Path

from perpscale.cli import main, replay
from perpscale.dataset import save_matrix
from perpscale.synthetic import gaussian_mixture

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output") / "cli"
out.mkdir(parents=True, exist_ok=True)
data = out / "blobs.csv"
save_matrix(gaussian_mixture(800, seed=2), data)

# %%
main(["embed", "--input", str(data), "--perplexity", "20", "--seed", "1", "--svg",
      "--output-dir", str(out / "embed")])
manifest = json.loads((out / "embed" / "manifest.json").read_text())
print("manifest keys:", sorted(manifest))

# %%
replay(out / "embed" / "manifest.json", out / "embed_replay")
same = (out / "embed" / "embedding.csv").read_bytes() == (out / "embed_replay" / "embedding.csv").read_bytes()
print("replay reproduces the embedding byte for byte:", same)

# %%
main(["mc", "--input", str(data), "--rates", "0.2,0.5,0.8", "--perplexity", "20", "--output-dir", str(out / "mc")])
main(["budget", "--n", "327457", "--perplexity", "2000", "--max-bytes", "32e9", "--output-dir", str(out / "budget")])
main(["sample", "--input", str(data), "--rates", "0.5,0.1", "--output-dir", str(out / "sample")])
