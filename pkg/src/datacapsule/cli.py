"""``datacapsule`` command-line interface.

Exit status: 0 on success, 2 on domain errors (bad policy, schema, unsatisfied
policy, ...), 64 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from .bench import BenchConfig, BenchConfigError, DEFAULT_REGULATIONS, Pool, rows_to_csv, run_bench
from .errors import DataCapsuleError, InvalidSchema, PolicyNotSatisfied
from .graph import CapsuleGraph
from .policy import to_dnf
from .policy_syntax import SourcePolicy, parse_policy, print_policy
from .residual import Analyst

EXIT_OK = 0
EXIT_DOMAIN = 2
EXIT_USAGE = 64
STORE_ENV = "DATACAPSULE_STORE"
DEFAULT_STORE = "capsule-store"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_schema(text: str) -> dict:
    """A JSON object file, or inline ``field=Label,field=Label``."""
    path = Path(text)
    if path.is_file():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidSchema(f"{path}: {exc}") from None
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise InvalidSchema(f"{path}: expected a JSON object of field -> datatype label")
        return data
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, sep, label = item.partition("=")
        if not sep or not name.strip() or not label.strip():
            raise InvalidSchema(f"cannot read schema entry {item!r}; expected field=Label")
        out[name.strip()] = label.strip()
    if not out:
        raise InvalidSchema("empty schema")
    return out


def _bindings(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise UsageError(f"--bind expects var=value, got {item!r}")
        out[name.lstrip("$")] = value
    return out


def _counts(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"--counts expects comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="datacapsule", description="Policy-carrying datasets and residual-policy analysis.")
    p.add_argument("--store", help=f"store directory (default: ${STORE_ENV} or ./{DEFAULT_STORE})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="add a CSV payload with its policy")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True, help="JSON file or field=Label,...")
    s.add_argument("--policy", required=True)
    s.add_argument("--subject", required=True)
    s.add_argument("--id")

    s = sub.add_parser("register", help="register an analysis program")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--program", help="program file")
    src.add_argument("--source", help="program text")
    s.add_argument("--purpose", action="append", default=[])
    s.add_argument("--analyst", default="anonymous")
    s.add_argument("--role", default=None)
    s.add_argument("--id")

    s = sub.add_parser("check", help="statically check a program and print its residual policy")
    s.add_argument("program_id")

    s = sub.add_parser("run", help="execute a checked program")
    s.add_argument("program_id")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--id")

    s = sub.add_parser("declassify", help="release a capsule's payload if its policy is satisfied")
    s.add_argument("capsule_id")
    s.add_argument("--analyst", required=True)
    s.add_argument("--role", required=True)
    s.add_argument("--bind", action="append", default=[], metavar="VAR=VALUE")
    s.add_argument("--print", dest="print_payload", action="store_true", help="print the payload, not its path")

    s = sub.add_parser("subject-view", help="lineage reachable from one subject's capsules")
    s.add_argument("subject")
    s.add_argument("--format", choices=("json", "dot"), default="json")

    s = sub.add_parser("graph", help="export the whole capsule graph")
    s.add_argument("--format", choices=("json", "dot"), default="json")

    s = sub.add_parser("export", help="portability export of one subject's rows")
    s.add_argument("subject")

    s = sub.add_parser("delete", help="delete an ingested capsule and recompute its descendants")
    s.add_argument("capsule_id")

    s = sub.add_parser("consent", help="record a subject's consent to a program")
    s.add_argument("subject")
    s.add_argument("program_id")

    s = sub.add_parser("notify", help="record that a subject was notified")
    s.add_argument("subject")

    s = sub.add_parser("affiliate", help="add an identity to FUNCTION($subject) for role checks")
    s.add_argument("function")
    s.add_argument("subject")
    s.add_argument("identity")

    s = sub.add_parser("policy", help="parse a policy file and print its normal form")
    s.add_argument("file")
    s.add_argument("--ast", action="store_true", help="print the parsed clauses instead of the DNF")

    s = sub.add_parser("audit", help="print the audit log")

    s = sub.add_parser("bench", help="policy-join benchmark; writes CSV")
    s.add_argument("--pool", action="append", default=[], help="policy file (repeatable); default: bundled pools")
    s.add_argument("--counts", default=",".join(str(2 ** k) for k in range(1, 11)))
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mean", type=float)
    s.add_argument("--stddev", type=float)
    s.add_argument("--output", help="CSV path (default: stdout)")
    return p


def _store(args) -> CapsuleGraph:
    return CapsuleGraph(args.store or os.environ.get(STORE_ENV) or DEFAULT_STORE)


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _run(args) -> int:
    cmd = args.command
    if cmd == "policy":
        ast = parse_policy(SourcePolicy.from_file(args.file))
        _emit(print_policy(ast if args.ast else to_dnf(ast)))
        return EXIT_OK
    if cmd == "bench":
        pools = tuple(Pool.load(p) for p in args.pool) or tuple(Pool.bundled(n) for n in DEFAULT_REGULATIONS)
        config = BenchConfig(pools, _counts(args.counts), args.iterations, args.seed, args.mean, args.stddev)
        text = rows_to_csv(run_bench(config))
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return EXIT_OK

    g = _store(args)
    if cmd == "ingest":
        _emit(g.ingest_capsule(args.data, parse_schema(args.schema), Path(args.policy), args.subject, args.id))
    elif cmd == "register":
        source = args.source if args.source is not None else Path(args.program).read_text(encoding="utf-8")
        analyst = Analyst(args.analyst, args.role or g.vocab.roles.bottom)
        _emit(g.register_program(source, args.purpose, analyst, args.id))
    elif cmd == "check":
        r = g.check_program(args.program_id)
        lines = ["# effect"] + [str(a) for a in r.effect] + ["# residual policy", print_policy(r.residual.dnf)]
        _emit("\n".join(lines))
    elif cmd == "run":
        _emit(g.run_program(args.program_id, args.seed, args.id))
    elif cmd == "declassify":
        path = g.declassify(args.capsule_id, Analyst(args.analyst, args.role), _bindings(args.bind))
        _emit(path.read_text(encoding="utf-8") if args.print_payload else str(path))
    elif cmd in ("subject-view", "graph"):
        view = g.subject_view(args.subject) if cmd == "subject-view" else g.export_graph()
        _emit(view.to_dot() if args.format == "dot" else json.dumps(view.to_json(), indent=2))
    elif cmd == "export":
        out = [{"capsule": pc.capsule_id, "columns": list(pc.table.columns),
                "rows": [list(r) for r in pc.table.rows]} for pc in g.portability_export(args.subject)]
        _emit(json.dumps(out, indent=2))
    elif cmd == "delete":
        report = g.delete_capsule(args.capsule_id)
        _emit("\n".join([f"deleted {report.deleted}"] + [f"recomputed {c}" for c in report.recomputed]))
    elif cmd == "consent":
        _emit(g.record_consent(args.subject, args.program_id))
    elif cmd == "notify":
        _emit(g.record_notification(args.subject))
    elif cmd == "affiliate":
        g.add_affiliation(args.function, args.subject, args.identity)
    elif cmd == "audit":
        for entry in g.audit_log():
            _emit(json.dumps(entry, sort_keys=True))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (UsageError, BenchConfigError) as exc:
        print(f"datacapsule: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PolicyNotSatisfied as exc:
        print(f"datacapsule: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except DataCapsuleError as exc:
        print(f"datacapsule: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"datacapsule: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
