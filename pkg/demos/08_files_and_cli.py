"""The on-disk format and the command line, end to end.

Writes a synthetic video as tensor files plus a JSON sidecar, validates it,
distills it and reads the distilled tokens back, all through the CLI entry
point that the ``diffdistill`` command uses.
"""

import json
import tempfile
from pathlib import Path

from diffdistill.cli import main
from diffdistill.tensorfile import load_tensor_file, read_header

work = Path(tempfile.mkdtemp(prefix="diffdistill-demo-"))
main(["gen", "--n-frames", "64", "--m-patches", "9", "--d-f", "16", "--d-p", "16",
      "--centers", "8", "--blend", "0.9", "--video-id", "demo", "--out-dir", str(work)])
print("files:", sorted(p.name for p in work.iterdir()))
print("patch file header:", read_header(work / "demo.patches.vlmp"))

main(["validate", str(work / "demo.json"), "--out-dir", str(work / "checks")])
main(["distill", str(work / "demo.json"), "--query", str(work / "demo.query.vlmp"),
      "--k", "8", "--stream", "--externalize", "--out-dir", str(work / "out")])

doc = json.loads((work / "out" / "demo.distilled.json").read_text())
tokens = load_tensor_file(work / "out" / doc["tokens_file"])
print("budget:", doc["budget"])
print("token matrix:", tokens.shape, "| config:", doc["meta"]["config"])
