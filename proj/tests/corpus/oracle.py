#!/usr/bin/env python3
"""Build expected.json for each corpus case.

Each case's oracle.sh runs under plain sh in a scratch directory, with $CASE
pointing at the case. expect.yaml then names the files it produced:

  {$file: name, format: iri}   one File, compared by basename, size and sha256
  {$files: glob | [names]}     array of Files, glob results sorted by name
  {$int: name}                 integer parsed from the file's text

Everything else is copied through literally.  With --check nothing is
written; the exit status reports whether the stored files are current.
"""

import argparse
import glob
import hashlib
import json
import os
import subprocess
import sys
import tempfile

import yaml

HERE = os.path.dirname(os.path.abspath(__file__))


def file_value(path, fmt=None):
    with open(path, "rb") as f:
        data = f.read()
    out = {
        "class": "File",
        "basename": os.path.basename(path),
        "size": len(data),
        "checksum": "sha256$" + hashlib.sha256(data).hexdigest(),
    }
    if fmt is not None:
        out["format"] = fmt
    return out


def resolve(node, work):
    if isinstance(node, dict):
        if "$file" in node:
            return file_value(os.path.join(work, node["$file"]), node.get("format"))
        if "$files" in node:
            spec = node["$files"]
            if isinstance(spec, str):
                names = sorted(os.path.basename(p) for p in glob.glob(os.path.join(work, spec)))
            else:
                names = list(spec)
            return [file_value(os.path.join(work, n), node.get("format")) for n in names]
        if "$int" in node:
            with open(os.path.join(work, node["$int"])) as f:
                return int(f.read().strip())
        return {k: resolve(v, work) for k, v in node.items()}
    if isinstance(node, list):
        return [resolve(v, work) for v in node]
    return node


def build(case):
    with open(os.path.join(case, "expect.yaml")) as f:
        expect = yaml.safe_load(f)
    with tempfile.TemporaryDirectory() as work:
        script = os.path.join(case, "oracle.sh")
        env = dict(os.environ, CASE=case, LC_ALL="C")
        subprocess.run(["sh", "-e", script], cwd=work, env=env, check=True)
        out = {"exit": expect.get("exit", 0)}
        if "outputs" in expect:
            out["outputs"] = resolve(expect["outputs"], work)
        if "scratch" in expect:
            out["scratch"] = expect["scratch"]
        return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", action="store_true")
    ap.add_argument("cases", nargs="*")
    args = ap.parse_args()
    cases = args.cases or sorted(
        os.path.join(HERE, d) for d in os.listdir(HERE)
        if os.path.isfile(os.path.join(HERE, d, "expect.yaml")))
    stale = 0
    for case in cases:
        case = os.path.abspath(case)
        text = json.dumps(build(case), indent=2, sort_keys=True) + "\n"
        target = os.path.join(case, "expected.json")
        if args.check:
            try:
                with open(target) as f:
                    current = f.read()
            except FileNotFoundError:
                current = None
            if current != text:
                print("stale: " + os.path.basename(case))
                stale += 1
        else:
            with open(target, "w") as f:
                f.write(text)
    return 1 if stale else 0


if __name__ == "__main__":
    sys.exit(main())
