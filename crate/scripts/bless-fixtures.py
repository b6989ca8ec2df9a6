#!/usr/bin/env python3
"""Recompute golden fixture digests with the release binary. Run from the workspace root after `cargo build --release`."""
import json, hashlib, subprocess, glob
def tomlval(v):
    if isinstance(v, bool): return "true" if v else "false"
    if isinstance(v, (int, float)): return repr(v)
    if isinstance(v, str): return json.dumps(v)
    if isinstance(v, list): return "[" + ", ".join(tomlval(x) for x in v) + "]"
    if isinstance(v, dict): return "{ " + ", ".join(f"{k} = {tomlval(x)}" for k, x in v.items()) + " }"
for f in sorted(glob.glob("crates/core/fixtures/*.json")):
    fx = json.load(open(f))
    cmd = dict(fx["command"]); name = cmd.pop("command")
    args = ["target/release/anderson", name, "--config", "/tmp/fx.toml"]
    if name == "stats": args += ["--seed", str(cmd["base_seed"])]
    open("/tmp/fx.toml", "w").write("\n".join(f"{k} = {tomlval(v)}" for k, v in cmd.items()) + "\n")
    out = subprocess.run(args, capture_output=True, check=True).stdout
    fx["digest"] = hashlib.sha256(out).hexdigest()
    open(f, "w").write(json.dumps(fx, indent=2) + "\n")
    print(fx["name"], fx["digest"], len(out))
