#!/usr/bin/env python3
"""Stand-in for `docker run` used by the tests.

Appends its argv as one JSON line to calls.log beside itself, then runs the
command on the host with every in-container path mapped back through the
-v mounts, in the mapped --workdir, with only the --env variables set.
"""
import json
import os
import sys

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "calls.log"), "a") as log:
    log.write(json.dumps(sys.argv[1:]) + "\n")

args = sys.argv[1:]
assert args[0] == "run", args
i = 1
mounts, env, workdir = [], {}, "/"
while args[i].startswith("-"):
    flag = args[i]
    if flag in ("--rm", "-i"):
        i += 1
        continue
    value = args[i + 1]
    if flag == "-v":
        host, inside, _mode = value.rsplit(":", 2)
        mounts.append((inside, host))
    elif flag == "--env":
        k, v = value.split("=", 1)
        env[k] = v
    elif flag == "--workdir":
        workdir = value
    i += 2
command = args[i + 1:]
mounts.sort(key=lambda m: -len(m[0]))


def to_host(text):
    # longest mount first, and only one: host paths may themselves sit under /tmp
    for inside, host in mounts:
        if text == inside:
            return host
        if inside + "/" in text:
            return text.replace(inside + "/", host + "/")
    return text


env = {k: to_host(v) for k, v in env.items()}
os.chdir(to_host(workdir))
os.execvpe(command[0], [to_host(a) for a in command], env)
