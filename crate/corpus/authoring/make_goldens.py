#!/usr/bin/env python3
"""Writes corpus/golden/ from the per-fixture run descriptions below.

Each description is what the instrumented fixture program does in one run:
its exit status, output, and the GH1 records its agent emits. Rerunning the
script reproduces the committed transcripts byte for byte.
"""

import hashlib
import json
import shutil
import sys
from pathlib import Path

CORPUS = Path(__file__).resolve().parent.parent
ROOT = "/home/ci/gadget-corpus"
MARK = "0xEFFACED"
FORIN = "__ghunter_forin__"
NODE_TAIL = [
    "at Module._compile (node:internal/modules/cjs/loader:1554:14)",
    "at Object..js (node:internal/modules/cjs/loader:1706:10)",
]


def tmpdir(fixture, run_id):
    h = hashlib.sha256(f"{fixture}/{run_id}".encode()).hexdigest()[:6]
    return f"/tmp/gadgetscan-run-{h}"


def lib(fn, path, line, col):
    return f"at {fn} ({ROOT}/lib/{path}:{line}:{col})"


class Run:
    def __init__(self, fixture, test, mode, prop=None, ptype=None):
        self.fixture = fixture
        self.test = test
        self.mode = mode
        self.prop = prop
        self.ptype = ptype
        if prop is None:
            self.run_id = mode
        else:
            self.run_id = f"{mode}-{ptype}-{prop}"
        self.tmp = tmpdir(fixture, self.run_id)
        self.code = 0
        self.stdout = ""
        self.stderr = ""
        self.log = []
        self.next_id = 0

    def test_frame(self, line, col=1, fn="Object.<anonymous>"):
        return f"at {fn} ({self.tmp}/{self.test}:{line}:{col})"

    def agent(self, fn):
        return f"at {fn} ({self.tmp}/{self.test}:2:{1000 + len(fn)})"

    def record(self, kind, payload):
        body = json.dumps(payload, separators=(",", ":"), ensure_ascii=False)
        self.log.append(f"GH1\t{kind}\t{body}")

    def undef(self, *props):
        for p in props:
            self.record("UNDEF_PROP", {"prop": p})

    def source(self, stack):
        """Mints the next taint for the polluted property."""
        i = self.next_id
        self.next_id += 1
        self.record(
            "SRC_ACCESS",
            {"prop": self.prop, "id": i, "type": self.ptype, "stack": [self.agent("__ghunterGet")] + stack},
        )
        return f"{MARK}{i}"

    def sink(self, name, arg, path, value, stack):
        self.record(
            "SINK_HIT",
            {"sink": name, "arg": arg, "path": path, "value": value, "stack": [self.agent("__ghunterSinkWrapper")] + stack},
        )

    def eval_hit(self, value, stack):
        self.record("EVAL_HIT", {"value": value, "stack": [self.agent("__ghunterFunction")] + stack})

    def ok(self, *names):
        self.stdout = "".join(f"ok {i} - {n}\n" for i, n in enumerate(names, 1))
        self.code = 0

    def not_ok(self, name, why):
        self.stdout = f"not ok 1 - {name}\n  ---\n  message: {why}\n  ...\n"
        self.code = 1

    def write(self, out):
        d = out / self.fixture / self.run_id
        d.mkdir(parents=True)
        meta = {
            "plan": {
                "run_id": self.run_id,
                "fixture": self.fixture,
                "test": f"fixtures/{self.test}",
                "mode": self.mode,
                "polluted_property": self.prop,
                "pollution_type": self.ptype,
                "timeout_secs": 20.0,
            },
            "outcome": {
                "exit": {"code": self.code, "signal": None},
                "timed_out": False,
                "duration_secs": duration(self.fixture, self.run_id),
            },
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
        (d / "agent.log").write_text("".join(line + "\n" for line in self.log))
        (d / "stdout.txt").write_text(self.stdout)
        (d / "stderr.txt").write_text(self.stderr)


def duration(fixture, run_id):
    h = int(hashlib.sha256(f"d/{fixture}/{run_id}".encode()).hexdigest()[:4], 16)
    return round(0.08 + h / 65535 * 0.4, 3)


# Fixture behaviour. Each function receives a prepared Run and fills it in.


def spawn_fixture(r):
    title = "spawn echo"
    norm = lib("normalizeSpawnArguments", "internal/child_process.js", 541, 24)
    call = [lib("spawn", "child_process.js", 88, 15), r.test_frame(9, 17)] + NODE_TAIL
    sink_stack = [
        lib("ChildProcess.spawn", "internal/child_process.js", 353, 28),
        lib("spawn", "child_process.js", 102, 9),
        r.test_frame(9, 17),
    ] + NODE_TAIL
    if r.mode in ("baseline", "collect"):
        if r.mode == "collect":
            r.undef("cwd", "env", "shell", "shell")
        r.ok(title)
        return
    if r.mode == "hunt":
        if (r.prop, r.ptype) == ("cwd", "string"):
            v = r.source([norm] + call)
            r.sink("process_wrap.spawn", 0, "cwd", v, sink_stack)
        elif (r.prop, r.ptype) == ("env", "object"):
            r.source([norm] + call)
            key = r.source([lib("normalizeSpawnArguments", "internal/child_process.js", 566, 21)] + call)
            val = r.source([lib("normalizeSpawnArguments", "internal/child_process.js", 567, 38)] + call)
            r.sink("process_wrap.spawn", 0, "envPairs.0", f"{key}={val}", sink_stack)
        elif (r.prop, r.ptype) == ("shell", "string"):
            v = r.source([norm] + call)
            r.sink("process_wrap.spawn", 0, "file", v, sink_stack)
            r.sink("process_wrap.spawn", 0, "args.0", v, sink_stack)
        elif r.prop != FORIN:
            r.source([norm] + call)
    outcome = {
        ("cwd", "string"): "spawn echo ENOENT",
        ("cwd", "object"): 'The "options.cwd" property must be of type string',
        ("shell", "string"): f"spawn {MARK}0 ENOENT",
    }.get((r.prop, r.ptype))
    if outcome:
        r.not_ok(title, outcome)
    else:
        r.ok(title)


def require_fixture(r):
    title = "require resolves package main"
    if r.mode == "collect":
        r.undef("main")
    if r.mode == "hunt" and r.prop == "main":
        stack = [
            lib("readPackageScope", "internal/modules/package_json_reader.js", 94, 31),
            lib("tryPackage", "internal/modules/loader.js", 71, 9),
            lib("Module._findPath", "internal/modules/loader.js", 102, 18),
            lib("require", "module.js", 30, 10),
            r.test_frame(4, 13),
        ] + NODE_TAIL
        v = r.source(stack)
        if r.ptype == "string":
            r.sink(
                "fs.internalModuleStat",
                0,
                "",
                f"{ROOT}/fixtures/node_modules/dep/{v}",
                [
                    lib("tryFile", "internal/modules/loader.js", 57, 16),
                    lib("tryPackage", "internal/modules/loader.js", 74, 12),
                    lib("Module._findPath", "internal/modules/loader.js", 102, 18),
                    lib("require", "module.js", 30, 10),
                    r.test_frame(4, 13),
                ]
                + NODE_TAIL,
            )
    r.ok(title)


def fetch_fixture(r):
    title = "fetch posts json"
    call = [lib("fetch", "fetch.js", 21, 10), r.test_frame(8, 19, "async main")]
    sink_stack = [
        lib("mainFetch", "internal/fetch/main.js", 140, 20),
        lib("fetch", "fetch.js", 37, 12),
        r.test_frame(8, 19, "async main"),
    ]
    if r.mode == "collect":
        r.undef("method", "headers", "0", "body", "method")
    failures = {
        ("headers", "string"): "TypeError: Headers init must be an object or iterable",
        ("method", "object"): "TypeError: Method must be a string",
    }
    if r.mode == "hunt" and r.prop != FORIN:
        key = (r.prop, r.ptype)
        if r.prop == "0":
            hstack = [lib("fillHeaders", "internal/fetch/headers.js", 44, 25)] + call
            if r.ptype == "string":
                r.sink("op_fetch", 2, "0", r.source(hstack), sink_stack)
            else:
                r.source(hstack)
                a = r.source([lib("fillHeaders", "internal/fetch/headers.js", 46, 30)] + call)
                b = r.source([lib("fillHeaders", "internal/fetch/headers.js", 46, 41)] + call)
                r.sink("op_fetch", 2, "0.0", a, sink_stack)
                r.sink("op_fetch", 2, "0.1", b, sink_stack)
        elif r.prop == "body":
            v = r.source([lib("extractBody", "internal/fetch/body.js", 212, 18)] + call)
            if r.ptype == "string":
                r.sink("op_fetch", 3, "", v, sink_stack)
        elif r.prop == "headers":
            hstack = [lib("fetch", "fetch.js", 24, 28), r.test_frame(8, 19, "async main")]
            r.source(hstack)
            if r.ptype == "object":
                a = r.source([lib("fillHeaders", "internal/fetch/headers.js", 51, 22)] + call)
                b = r.source([lib("fillHeaders", "internal/fetch/headers.js", 51, 35)] + call)
                r.sink("op_fetch", 2, "0.0", a, sink_stack)
                r.sink("op_fetch", 2, "0.1", b, sink_stack)
        elif r.prop == "method":
            v = r.source([lib("fetch", "fetch.js", 22, 27), r.test_frame(8, 19, "async main")])
            if r.ptype == "string":
                r.sink("op_fetch", 0, "", v, sink_stack)
    why = failures.get((r.prop, r.ptype))
    if why:
        r.not_ok(title, why)
    else:
        r.ok(title)


def abort_fixture(r):
    title = "fetch honours abort signal"
    if r.mode == "collect":
        r.undef("signal")
    if r.mode in ("hunt", "crash") and r.prop == "signal":
        if r.mode == "hunt":
            r.source([lib("fetch", "fetch.js", 47, 24), r.test_frame(7, 1)] + NODE_TAIL)
        r.code = 1
        r.stdout = ""
        r.stderr = (
            f"{ROOT}/lib/fetch.js:48\n"
            '    signal.addEventListener("abort", onAbort, { once: true });\n'
            "           ^\n"
            "\n"
            "TypeError: signal.addEventListener is not a function\n"
            f"    at fetch ({ROOT}/lib/fetch.js:48:12)\n"
            f"    at Object.<anonymous> ({r.tmp}/{r.test}:7:1)\n"
            "    at Module._compile (node:internal/modules/cjs/loader:1554:14)\n"
            "    at Object..js (node:internal/modules/cjs/loader:1706:10)\n"
            "    at Module.load (node:internal/modules/cjs/loader:1289:32)\n"
            "\n"
            "Node.js v22.12.0\n"
        )
        return
    r.ok(title)


def forin_fixture(r):
    title = "configure copies options"
    if r.mode == "collect":
        r.undef("timeout")
    if r.mode == "hunt":
        if r.prop == FORIN:
            v = r.source([lib("configure", "config.js", 12, 38), r.test_frame(6, 1)] + NODE_TAIL)
            r.sink(
                "config_binding.apply",
                0,
                FORIN,
                v,
                [lib("configure", "config.js", 15, 18), r.test_frame(6, 1)] + NODE_TAIL,
            )
        elif r.prop == "timeout":
            r.source([lib("configure", "config.js", 14, 31), r.test_frame(6, 1)] + NODE_TAIL)
            if r.ptype == "object":
                r.record("AGENT_ERR", {"msg": "sink wrapper: skipped non-plain value at timeout"})
    r.ok(title)


def eval_fixture(r):
    title = "template renders"
    if r.mode == "collect":
        r.undef("helpers")
    if r.mode == "hunt" and r.prop == "helpers":
        v = r.source(
            [lib("compileTemplate", "template.js", 18, 27), lib("render", "template.js", 30, 18), r.test_frame(5, 13)]
            + NODE_TAIL
        )
        if r.ptype == "string":
            r.eval_hit(
                f"{v};\nwith (data) {{ return `Hello ${{name}}`; }}",
                [lib("compileTemplate", "template.js", 22, 12), lib("render", "template.js", 30, 18), r.test_frame(5, 13)]
                + NODE_TAIL,
            )
    r.ok(title)


def benign_fixture(r):
    r.ok("add", "format")


def noise_fixture(r):
    title = "decode utf8"
    if r.mode == "collect":
        r.undef("encoding")
    if r.mode == "hunt" and r.prop == "encoding":
        v = r.source([lib("decode", "codec.js", 11, 30), r.test_frame(5, 14)] + NODE_TAIL)
        if r.ptype == "string":
            r.sink(
                "internal/util/types.check",
                0,
                "",
                v,
                [lib("check", "internal/util/types.js", 77, 11), lib("decode", "codec.js", 14, 9), r.test_frame(5, 14)]
                + NODE_TAIL,
            )
    r.ok(title)


def modifier_fixture(r):
    title = "logger writes at level"
    if r.mode == "collect":
        r.undef("level")
    if r.mode == "hunt" and r.prop == "level":
        stack = [lib("createLogger", "logger.js", 9, 27), r.test_frame(4, 16)] + NODE_TAIL
        v = r.source(stack)
        if r.ptype == "string":
            # Level names drop their numeric suffix before reaching the binding.
            r.sink(
                "log_binding.setLevel",
                0,
                "",
                v.rstrip("0123456789") + "WARN",
                [lib("createLogger", "logger.js", 13, 17), r.test_frame(4, 16)] + NODE_TAIL,
            )
            # The message prefix appends a sequence number to the level.
            r.sink(
                "log_binding.write",
                0,
                "",
                f"[{v}3] starting",
                [lib("Logger.info", "logger.js", 27, 17), r.test_frame(5, 8)] + NODE_TAIL,
            )
    r.ok(title)


def nested_env_fixture(r):
    title = "spawn child with explicit env"
    if r.mode == "collect":
        r.undef("NODE_OPTIONS")
    if r.mode in ("hunt", "crash") and r.prop == "NODE_OPTIONS" and r.ptype == "string":
        if r.mode == "hunt":
            v = r.source(
                [lib("prepareEnv", "internal/child_process.js", 612, 17), lib("spawn", "child_process.js", 88, 15), r.test_frame(6, 17)]
                + NODE_TAIL
            )
            r.sink(
                "process_wrap.spawn",
                0,
                "env.NODE_OPTIONS",
                v,
                [
                    lib("ChildProcess.spawn", "internal/child_process.js", 353, 28),
                    lib("spawn", "child_process.js", 102, 9),
                    r.test_frame(6, 17),
                ]
                + NODE_TAIL,
            )
        r.not_ok(title, f"child exited with code 9: node: {MARK}0 is not allowed in NODE_OPTIONS")
        return
    if r.mode == "hunt" and r.prop == "NODE_OPTIONS":
        r.source([lib("prepareEnv", "internal/child_process.js", 612, 17), lib("spawn", "child_process.js", 88, 15), r.test_frame(6, 17)] + NODE_TAIL)
    r.ok(title)


FIXTURES = [
    ("01_spawn_test", ["cwd", "env", "shell"], spawn_fixture),
    ("02_require_test", ["main"], require_fixture),
    ("03_fetch_test", ["0", "body", "headers", "method"], fetch_fixture),
    ("04_abort_signal_test", ["signal"], abort_fixture),
    ("05_forin_copy_test", ["timeout"], forin_fixture),
    ("06_eval_template_test", ["helpers"], eval_fixture),
    ("07_benign_test", [], benign_fixture),
    ("08_infra_noise_test", ["encoding"], noise_fixture),
    ("09_uppercase_modifier_test", ["level"], modifier_fixture),
    ("10_nested_env_test", ["NODE_OPTIONS"], nested_env_fixture),
]


def runs():
    for name, props, behave in FIXTURES:
        test = f"{name}.js"
        plans = [Run(name, test, "baseline"), Run(name, test, "collect")]
        for mode in ("hunt", "crash"):
            for p in sorted(props):
                for t in ("string", "object"):
                    plans.append(Run(name, test, mode, p, t))
            plans.append(Run(name, test, mode, FORIN, "forin"))
        for r in plans:
            if r.mode == "crash":
                # The crash snippet pollutes without logging.
                behave(r)
                r.log = []
            else:
                behave(r)
            yield r


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else CORPUS / "golden"
    if out.exists():
        shutil.rmtree(out)
    n = 0
    for r in runs():
        r.write(out)
        n += 1
    print(f"wrote {n} transcripts to {out}")


if __name__ == "__main__":
    main()
