"""Command-line front end.

Experiments run in-process by default. With ``--server URL`` the same
subcommands are sent to a running service and only the files are written
locally.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, workflows
from .config import load_config
from .data import load_csv, parse_csv_text, write_csv
from .errors import ConfigError, DataError, FairFLError
from .results import write_lines

log = logging.getLogger("fairfl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class RemoteError(Exception):
    def __init__(self, status: int, body: dict):
        self.status = status
        self.body = body
        super().__init__(body.get("message") or str(body))


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairfl", description="Fair federated learning simulator and attack harness")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=_u64, help="override the master seed in the config")
    p.add_argument("--threads", type=_positive, help="parallel client training threads")
    p.add_argument("--server", metavar="URL", help="send the command to a running fairfl service")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write a result file")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)

    sw = sub.add_parser("sweep", help="run one experiment per parameter value")
    sw.add_argument("--config", required=True, type=Path)
    sw.add_argument("--param", required=True, choices=workflows.SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma-separated list, e.g. 1,5,10,20")
    sw.add_argument("--out-dir", required=True, type=Path)

    gd = sub.add_parser("gen-data", help="write the synthetic dataset described by a config as CSV")
    gd.add_argument("--config", required=True, type=Path)
    gd.add_argument("--out", required=True, type=Path)

    st = sub.add_parser("stats", help="group sizes and group-conditional label rates of a CSV dataset")
    st.add_argument("--data", required=True, type=Path)

    sv = sub.add_parser("serve", help="start the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    return p


# ------------------------------------------------------------------ execution


class _Local:
    def run(self, cfg):
        return workflows.run_config(cfg)

    def sweep(self, cfg, param, values):
        return [
            {"value": it.value, "key": it.key, "ok": it.ok, "error": it.error, "lines": it.lines}
            for it in workflows.run_sweep(cfg, param, values)
        ]

    def gen_data(self, cfg):
        return workflows.generate_from_config(cfg)

    def stats(self, path):
        return workflows.dataset_stats(load_csv(path))


class _Remote:
    def __init__(self, url: str):
        import httpx

        self.client = httpx.Client(base_url=url.rstrip("/"), timeout=None)

    def _post(self, path, body):
        r = self.client.post(path, json=body)
        if r.status_code != 200:
            try:
                detail = r.json()
            except ValueError:
                detail = {"message": r.text}
            if not isinstance(detail, dict) or "message" not in detail:
                detail = {"kind": "config" if r.status_code == 422 else "runtime", "message": json.dumps(detail)}
            raise RemoteError(r.status_code, detail)
        return r.json()

    @staticmethod
    def _body(cfg):
        return {"config": cfg.model_dump(mode="json")}

    def run(self, cfg):
        return self._post("/runs", self._body(cfg))["lines"]

    def sweep(self, cfg, param, values):
        body = dict(self._body(cfg), param=param, values=values)
        return self._post("/sweeps", body)["results"]

    def gen_data(self, cfg):
        return parse_csv_text(self._post("/datasets/synthetic", self._body(cfg))["csv"], source="service response")

    def stats(self, path):
        return self._post("/datasets/stats", {"csv": Path(path).read_text(encoding="utf-8")})


def _config(args):
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {args.config}: {exc.strerror or exc}") from exc
    return workflows.with_overrides(cfg, seed=args.seed, threads=args.threads, base_dir=args.config.parent)


def _fmt(v, spec=".4f"):
    return "n/a" if v is None else format(v, spec)


def _print_summary(summary: dict, out) -> None:
    print(f"rounds: {summary['rounds']}", file=out)
    print(f"final accuracy: {_fmt(summary['final_accuracy'])}", file=out)
    print(f"final |DP|: {_fmt(summary['final_dp_abs'])} (signed {_fmt(summary.get('final_dp_signed'), '+.4f')})", file=out)
    if summary.get("attack_dp_delta") is not None:
        print(
            f"|DP| change attributable to attack: {summary['attack_dp_delta']:+.4f}"
            f" (|DP| {summary['pre_attack_dp_abs']:.4f} before the first attack round)",
            file=out,
        )


def cmd_run(args, backend, out) -> int:
    cfg = _config(args)
    lines = backend.run(cfg)
    write_lines(args.out, lines)
    _print_summary(lines[-1], out)
    print(f"results: {args.out}", file=out)
    return EXIT_OK


def cmd_sweep(args, backend, out) -> int:
    cfg = _config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    values = workflows.parse_sweep_values(args.param, values)
    results = backend.sweep(cfg, args.param, values)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for res in results:
        if res["ok"]:
            write_lines(args.out_dir / f"{res['key']}.jsonl", res["lines"])
            s = res["lines"][-1]
            rows.append((res["key"].split("=", 1)[1], "ok", _fmt(s["final_accuracy"]), _fmt(s["final_dp_abs"])))
        else:
            rows.append((res["key"].split("=", 1)[1], "failed", "n/a", "n/a"))
            print(f"{res['key']} failed: {res['error']}", file=sys.stderr)
    header = (args.param, "status", "final_accuracy", "final_abs_dp")
    table = [header, *rows]
    (args.out_dir / "summary.tsv").write_text("".join("\t".join(r) + "\n" for r in table), encoding="utf-8")
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    for r in table:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=out)
    return EXIT_OK if all(r["ok"] for r in results) else EXIT_RUNTIME


def cmd_gen_data(args, backend, out) -> int:
    cfg = _config(args)
    if cfg.data.source != "synthetic":
        raise ConfigError("data.source", "gen-data needs a synthetic data section")
    data = backend.gen_data(cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, args.out)
    print(f"wrote {len(data)} rows to {args.out}", file=out)
    return EXIT_OK


def cmd_stats(args, backend, out) -> int:
    st = backend.stats(args.data)
    print(f"samples: {st['n_samples']}  features: {st['input_dim']}  label rate: {_fmt(st['label_rate'])}", file=out)
    for s in ("0", "1"):
        g = st["groups"][s]
        print(f"group {s}: n={g['n']}  label rate={_fmt(g['label_rate'])}", file=out)
    print(f"label rate gap (group 0 - group 1): {_fmt(st['label_rate_gap'], '+.4f')}", file=out)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("fairfl.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-data": cmd_gen_data, "stats": cmd_stats}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "serve":
        return cmd_serve(args)
    try:
        backend = _Remote(args.server) if args.server else _Local()
        return COMMANDS[args.command](args, backend, out)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RemoteError as exc:
        kind = exc.body.get("kind")
        print(f"{'config' if kind == 'config' else 'runtime'} error (server): {exc}", file=sys.stderr)
        return EXIT_CONFIG if kind == "config" else EXIT_RUNTIME
    except (FairFLError, ArithmeticError, OSError, ValueError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # httpx transport errors and anything unexpected
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
