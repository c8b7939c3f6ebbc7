"""Command-line entry point: validate -> resolve -> plan -> run -> registry.

All state (registry, cache, content store, reports) lives under a single
workspace directory (--workspace, env NLPGRID_WORKSPACE, default
./nlpgrid-workspace), so invocations are hermetic and reproducible.

Exit codes are a stable contract:
  0 success, 2 parse/validation failure, 3 no conversion path,
  4 deadline infeasible, 5 budget exceeded, 6 no feasible node,
  7 execution failure (retry exhausted / trace invalid).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import broker as broker_mod
from . import gridsim, harvesting, resolver, speclang
from .errors import (
    BudgetExceeded,
    DanglingReference,
    DeadlineInfeasible,
    MalformedXml,
    NlpGridError,
    NoConversionPath,
    NoFeasibleNode,
    NoRetryTarget,
    SchemaViolation,
)
from .registry import (
    Query,
    Registry,
    record_from_application,
    record_from_component,
)
from .resultstore import ContentStore, ResultCache
from .vocab import VocabularyTables

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NO_CONVERSION = 3
EXIT_DEADLINE = 4
EXIT_BUDGET = 5
EXIT_NO_NODE = 6
EXIT_EXECUTION = 7


class Workspace:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def registry(self) -> Registry:
        return Registry(root=self.root / "registry")

    def cache(self, registry=None) -> ResultCache:
        return ResultCache(path=self.root / "cache.json", registry=registry)

    @property
    def content_store(self) -> ContentStore:
        return ContentStore(self.root / "results")

    @property
    def reports_dir(self) -> Path:
        path = self.root / "reports"
        path.mkdir(parents=True, exist_ok=True)
        return path


def _load_application(path, vocab) -> speclang.ApplicationDescription:
    text = Path(path).read_text(encoding="utf-8")
    return speclang.parse_application(text)


def _print_report(report: speclang.ValidationReport) -> None:
    for f in report.findings:
        print(f"{f.severity}\t{f.code}\t{f.location}\t{f.message}")
    print(f"{len(report.errors)} error(s), {len(report.warnings)} warning(s)")


def cmd_validate(args, ws: Workspace) -> int:
    vocab = _vocab(args)
    try:
        app = _load_application(args.app, vocab)
    except (MalformedXml, SchemaViolation, DanglingReference, NlpGridError, OSError) as exc:
        print(f"parse failure: {exc}", file=sys.stderr)
        return EXIT_PARSE
    report = speclang.validate(app, vocab)
    _print_report(report)
    return EXIT_OK if report.valid else EXIT_PARSE


def _prepare_dag(args, ws: Workspace, vocab):
    """Shared validate -> flatten -> resolve front half of plan/run."""
    app = _load_application(args.app, vocab)
    bindings = dict(kv.split("=", 1) for kv in (args.bind or []))
    app = speclang.substitute_variables(app, bindings, phase="static")
    report = speclang.validate(app, vocab)
    if not report.valid:
        raise SchemaViolation(
            "; ".join(f"{f.location}: {f.message}" for f in report.errors)
        )
    reg = Registry(root=Path(args.registry)) if args.registry else ws.registry
    app = resolver.flatten(app, reg)
    dag = resolver.build_dag(app)
    lines: list[str] = []
    dag = resolver.resolve(dag, reg, report=lines)
    return app, dag, reg, lines


def cmd_resolve(args, ws: Workspace) -> int:
    vocab = _vocab(args)
    try:
        app, dag, reg, lines = _prepare_dag(args, ws, vocab)
    except NoConversionPath as exc:
        print(f"no conversion path: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERSION
    except (NlpGridError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    # Emit the resolved application: original app plus inserted converters.
    resolved = _dag_to_application(app, dag)
    sys.stdout.write(speclang.serialize_application(resolved))
    if args.report:
        Path(args.report).write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )
    return EXIT_OK


def _dag_to_application(app, dag):
    """Rebuild an application description from a (possibly resolved) dag."""
    components = []
    seen = set()
    order = dag.topological_ids()
    for process_id in order:
        c = dag.task(process_id).component
        if c.identifier_name not in seen:
            seen.add(c.identifier_name)
            components.append(c)
    preds = {t.process_id: set() for t in dag.tasks}
    for a, b in dag.edges:
        preds[b].add(a)
    pipeline = tuple(
        speclang.PipelineStep(
            process_id=pid,
            component_name=dag.task(pid).component.identifier_name,
            after=frozenset(preds[pid]),
        )
        for pid in order
    )
    return speclang.ApplicationDescription(
        datasources=app.datasources,
        components=tuple(components),
        pipeline=pipeline,
        variables=app.variables,
    )


def _prefs(args) -> broker_mod.SchedulingPreferences:
    return broker_mod.SchedulingPreferences(
        deadline_s=args.deadline,
        budget=args.budget,
        placement=args.placement,
        objective=args.objective,
    )


def _plan_schedule(args, ws, vocab, cache):
    app, dag, reg, _ = _prepare_dag(args, ws, vocab)
    pool = broker_mod.parse_pool(Path(args.pool).read_text(encoding="utf-8"))
    chunk_bytes = int(args.chunk_mb * 1000 * 1000) if args.chunk_mb else None
    schedule = broker_mod.plan(dag, pool, _prefs(args), cache=cache, chunk_bytes=chunk_bytes)
    return dag, pool, schedule


def _write_schedule_outputs(args, ws, schedule):
    report = broker_mod.render_schedule_report(schedule)
    sys.stdout.write(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "schedule.tsv").write_text(report, encoding="utf-8")
        if not args.no_figures:
            from .figures import render_gantt

            render_gantt(schedule, out / "schedule.png")


def cmd_plan(args, ws: Workspace) -> int:
    vocab = _vocab(args)
    try:
        _, _, schedule = _plan_schedule(args, ws, vocab, cache=ws.cache())
    except NoConversionPath as exc:
        print(f"no conversion path: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERSION
    except DeadlineInfeasible as exc:
        print(f"deadline infeasible: {exc}", file=sys.stderr)
        return EXIT_DEADLINE
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NoFeasibleNode as exc:
        print(f"no feasible node: {exc}", file=sys.stderr)
        return EXIT_NO_NODE
    except (NlpGridError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    _write_schedule_outputs(args, ws, schedule)
    return EXIT_OK


def _parse_failures(path) -> list[gridsim.NodeFailure]:
    failures = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        node_id, time_s = line.split()
        failures.append(gridsim.NodeFailure(node_id=node_id, time_s=float(time_s)))
    return failures


def cmd_run(args, ws: Workspace) -> int:
    vocab = _vocab(args)
    registry = ws.registry
    cache = ws.cache(registry=registry)
    try:
        dag, pool, schedule = _plan_schedule(args, ws, vocab, cache=cache)
        failures = _parse_failures(args.failures) if args.failures else None
        trace = gridsim.execute(
            schedule,
            dag,
            pool,
            stubs=gridsim.StubTable.generic(),
            seed=args.seed,
            failures=failures,
            store=ws.content_store,
            cache=cache,
        )
    except NoConversionPath as exc:
        print(f"no conversion path: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERSION
    except DeadlineInfeasible as exc:
        print(f"deadline infeasible: {exc}", file=sys.stderr)
        return EXIT_DEADLINE
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NoFeasibleNode as exc:
        print(f"no feasible node: {exc}", file=sys.stderr)
        return EXIT_NO_NODE
    except NoRetryTarget as exc:
        print(f"execution failed: {exc}", file=sys.stderr)
        return EXIT_EXECUTION
    except (NlpGridError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    rendered = gridsim.render_trace(trace)
    sys.stdout.write(rendered)
    out = Path(args.out) if args.out else ws.reports_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.tsv").write_text(rendered, encoding="utf-8")
    (out / "schedule.tsv").write_text(
        broker_mod.render_schedule_report(schedule), encoding="utf-8"
    )
    if not args.no_figures:
        from .figures import render_gantt, render_trace_figure

        render_gantt(schedule, out / "schedule.png")
        render_trace_figure(trace, out / "trace.png")
    violations = gridsim.verify_trace(trace, schedule, dag)
    for violation in violations:
        print(f"trace violation: {violation}", file=sys.stderr)
    return EXIT_OK if not violations else EXIT_EXECUTION


def cmd_registry(args, ws: Workspace) -> int:
    registry = Registry(root=Path(args.registry)) if args.registry else ws.registry
    if args.registry_cmd == "add":
        text = Path(args.file).read_text(encoding="utf-8")
        payload = str(Path(args.file).resolve())
        try:
            import xml.etree.ElementTree as ET

            root_tag = ET.fromstring(text).tag
            if root_tag == "component":
                record = record_from_component(speclang.parse_component(text), payload_ref=payload)
            elif root_tag == "application":
                app = speclang.parse_application(text)
                name = args.name or Path(args.file).stem
                record = record_from_application(app, name, payload_ref=payload)
            else:
                print(f"unsupported document root {root_tag!r}", file=sys.stderr)
                return EXIT_PARSE
        except NlpGridError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        record_id = registry.add_record(record)
        print(record_id)
        return EXIT_OK
    if args.registry_cmd == "query":
        requirements = dict(kv.split("=", 1) for kv in (args.require or []))
        query = Query(
            kind=args.kind,
            functionality=args.functionality,
            input_type=args.input,
            output_type=args.output,
            requirements=requirements,
            free_text=args.free_text,
            since=args.since,
        )
        if query.is_empty():
            records = registry.all_records()
        else:
            records = registry.query(query)
        for record in records:
            print(record.record_id)
        return EXIT_OK
    if args.registry_cmd == "harvest":
        try:
            report = harvesting.harvest(registry, args.endpoint, since=args.since)
        except NlpGridError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        print(
            f"fetched={report.fetched} inserted={report.inserted} "
            f"updated={report.updated} pages={report.pages}"
        )
        return EXIT_OK
    if args.registry_cmd == "serve":
        server = harvesting.make_http_server(registry, port=args.port, page_size=args.page_size)
        host, port = server.server_address[:2]
        print(f"serving provider on http://{host}:{port}/ (Ctrl-C to stop)")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
        return EXIT_OK
    raise AssertionError(args.registry_cmd)


def _vocab(args) -> VocabularyTables:
    if args.vocab_dir:
        return VocabularyTables.from_dir(args.vocab_dir)
    return VocabularyTables.builtin()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlpgrid",
        description="Broker toolkit for component-based pipelines on a simulated grid.",
    )
    parser.add_argument(
        "--workspace",
        default=os.environ.get("NLPGRID_WORKSPACE", "nlpgrid-workspace"),
        help="state directory (registry, cache, results, reports)",
    )
    parser.add_argument("--vocab-dir", default=None, help="vocabulary tables directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate an application description")
    p.add_argument("app")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("resolve", help="flatten and repair type incompatibilities")
    p.add_argument("app")
    p.add_argument("--registry", default=None)
    p.add_argument("--bind", action="append", metavar="NAME=VALUE")
    p.add_argument("--report", default=None, help="write the resolution report here")
    p.set_defaults(func=cmd_resolve)

    def planning_flags(p):
        p.add_argument("app")
        p.add_argument("pool")
        p.add_argument("--registry", default=None)
        p.add_argument("--bind", action="append", metavar="NAME=VALUE")
        p.add_argument("--deadline", type=float, default=None)
        p.add_argument("--budget", type=float, default=None)
        p.add_argument(
            "--placement",
            choices=[broker_mod.PROCESSOR_CENTRIC, broker_mod.DATA_CENTRIC],
            default=broker_mod.PROCESSOR_CENTRIC,
        )
        p.add_argument(
            "--objective",
            choices=[broker_mod.MIN_TIME, broker_mod.MIN_COST],
            default=broker_mod.MIN_TIME,
        )
        p.add_argument("--chunk-mb", type=float, default=10.0)
        p.add_argument("--out", default=None, help="write report (and figures) here")
        p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("plan", help="compute a schedule")
    planning_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="plan then execute on the simulator")
    planning_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--failures", default=None, help="failure plan file: 'node time_s' lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("registry", help="registry operations")
    p.add_argument("--registry", default=None, help="registry directory (default: workspace)")
    rsub = p.add_subparsers(dest="registry_cmd", required=True)
    pa = rsub.add_parser("add")
    pa.add_argument("file")
    pa.add_argument("--name", default=None)
    pq = rsub.add_parser("query")
    pq.add_argument("--kind", default=None)
    pq.add_argument("--functionality", default=None)
    pq.add_argument("--input", default=None)
    pq.add_argument("--output", default=None)
    pq.add_argument("--free-text", default=None)
    pq.add_argument("--since", default=None)
    pq.add_argument("--require", action="append", metavar="AXIS=TERM")
    ph = rsub.add_parser("harvest")
    ph.add_argument("endpoint")
    ph.add_argument("--since", default=None)
    ps = rsub.add_parser("serve")
    ps.add_argument("--port", type=int, default=8765)
    ps.add_argument("--page-size", type=int, default=harvesting.DEFAULT_PAGE_SIZE)
    p.set_defaults(func=cmd_registry)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ws = Workspace(args.workspace)
    return args.func(args, ws)


if __name__ == "__main__":
    sys.exit(main())
