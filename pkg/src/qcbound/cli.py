"""Command-line entry point.

Exit codes: 0 success / valid certificate, 1 usage or input error,
2 infeasible SDP or invalid certificate, 3 solver numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from .experiments import SUITES, ConfigError, run_suite
from .network import ModelError, load_model, save_model
from .qc import Coupling, InputSpec, QCError
from .sdp import BoundCertificate, ObjectiveWeights, SolverOptions, check_certificate, solve
from .transforms import FixedPointFormat, PruneSpec, SaturationError, prune_network, quantize_network

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for invalid results."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}")
    return vals


def parse_quantise(text: str) -> FixedPointFormat:
    """``IB,FB`` or ``FB=2`` / ``IB=8,FB=2`` (IB defaults to 8)."""
    parts = dict(IB="8")
    items = text.split(",")
    if all("=" in t for t in items):
        parts.update(t.split("=", 1) for t in items)
    elif len(items) == 2:
        parts["IB"], parts["FB"] = items
    else:
        raise UsageError(f"--quantise: expected IB,FB or FB=n, got {text!r}")
    try:
        return FixedPointFormat(int(parts["IB"]), int(parts["FB"]))
    except (KeyError, ValueError) as err:
        raise UsageError(f"--quantise: {err}") from None


def parse_prune(text: str, norm: float = 2) -> PruneSpec:
    key, _, val = text.partition("=")
    try:
        if key == "count":
            return PruneSpec(count=int(val), norm=norm)
        if key == "threshold":
            return PruneSpec(threshold=float(val), norm=norm)
    except ValueError as err:
        raise UsageError(f"--prune: {err}") from None
    raise UsageError(f"--prune: expected count=N or threshold=t, got {text!r}")


def _load(path) -> "NeuralNetwork":  # noqa: F821
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return load_model(path)


def build_problem(args):
    """Networks and input set described by the shared problem flags."""
    given = [bool(args.model2), bool(args.quantise), bool(args.prune)]
    if sum(given) > 1:
        raise UsageError("--model2, --quantise and --prune are mutually exclusive")
    net1 = _load(args.model)
    fmt = None
    if args.model2:
        net2 = _load(args.model2)
    elif args.quantise:
        fmt = parse_quantise(args.quantise)
        net2 = quantize_network(net1, fmt)
    elif args.prune:
        net2 = prune_network(net1, parse_prune(args.prune, args.norm))
    else:
        net2 = net1
    coupling = Coupling(args.coupling) if args.coupling else (Coupling.QUANTISED if fmt else Coupling.INDEPENDENT)
    if coupling is Coupling.QUANTISED and fmt is None:
        raise UsageError("quantised coupling needs --quantise")
    lo, hi = _floats(args.box, 2, "--box")
    spec = InputSpec.box(net1.input_dim, lo, hi, coupling, fmt)
    return (net1, net2), spec


def _solver_options(args) -> SolverOptions:
    from .qc import ActivationQCConfig
    return SolverOptions(backend=args.backend or "", eps=args.eps, activation=ActivationQCConfig(args.slope))


def _snapshot(args, path: Path, **resolved) -> None:
    data = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    for key in ("model", "model2"):
        if data.get(key):
            data[key] = str(Path(data[key]).resolve())
    data.update(resolved)
    path.write_text(json.dumps(data, indent=1))


def cmd_certify(args) -> int:
    nets, spec = build_problem(args)
    weights = ObjectiveWeights(*_floats(args.weights, 4, "--weights"))
    cert = solve(nets, spec, weights, _solver_options(args))
    out = Path(args.out)
    cert.save(out)
    _snapshot(args, out.with_suffix(".config.json"), backend=cert.backend)
    g = cert.gammas
    print(f"status={cert.status} gamma_x1={g.x1:.6g} gamma_x2={g.x2:.6g} gamma_x={g.x:.6g} "
          f"gamma={g.affine:.6g} lmi_max_eigenvalue={cert.lmi_max_eigenvalue:.3e}")
    if cert.message:
        print(cert.message, file=sys.stderr)
    if cert.ok:
        return EXIT_OK
    return EXIT_INVALID if cert.status == "infeasible" else EXIT_NUMERICAL


def cmd_check(args) -> int:
    try:
        cert = BoundCertificate.load(args.cert)
    except FileNotFoundError:
        raise UsageError(f"certificate not found: {args.cert}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise UsageError(f"cannot parse certificate {args.cert}: {type(err).__name__}: {err}") from None
    nets, spec = build_problem(args)
    report = check_certificate(cert, nets, spec, n_samples=args.samples, seed=args.seed)
    print(report.summary())
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_transform(args) -> int:
    if bool(args.quantise) == bool(args.prune):
        raise UsageError("transform needs exactly one of --quantise or --prune")
    net = _load(args.model)
    if args.quantise:
        out = quantize_network(net, parse_quantise(args.quantise))
    else:
        out = prune_network(net, parse_prune(args.prune, args.norm))
    save_model(out, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = {}
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config {args.config}: {err}") from None
    report = run_suite(args.suite, config)
    paths = report.write(args.out_dir)
    for s in report.summary:
        print(json.dumps(s))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def _add_problem_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="first network (JSON)")
    p.add_argument("--model2", help="second network (JSON); default: the first network itself")
    p.add_argument("--quantise", help="compare against the quantised network, IB,FB or FB=n")
    p.add_argument("--prune", help="compare against the pruned network, count=N or threshold=t")
    p.add_argument("--norm", type=float, default=2, help="p-norm used to rank neurons for pruning")
    p.add_argument("--box", default="-1,1", help="input hyper-rectangle lo,hi applied to every coordinate")
    p.add_argument("--coupling", choices=[c.value for c in Coupling],
                   help="relation between the two inputs (default: quantised with --quantise, else independent)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qcbound", description="Certified worst-case error bounds "
                                     "between two ReLU networks via quadratic constraints and an SDP.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("certify", help="solve the bound SDP and write a certificate")
    _add_problem_flags(p)
    p.add_argument("--weights", default="1,1,1,1", help="objective weights w_x1,w_x2,w_x,w_affine")
    p.add_argument("--out", required=True, help="certificate JSON path")
    p.add_argument("--backend", help="conic solver backend (default: $QCBOUND_SOLVER or clarabel)")
    p.add_argument("--eps", type=float, default=1e-8, help="strictness margin of the LMI")
    p.add_argument("--slope", default="none", choices=["none", "same_index", "all_cross"],
                   help="add slope-restriction QCs between the networks")
    p.add_argument("--config", help="JSON snapshot of a previous run; its values become defaults")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("check", help="validate a certificate against the networks")
    _add_problem_flags(p)
    p.add_argument("--cert", required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("transform", help="quantise or prune a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--quantise")
    p.add_argument("--prune")
    p.add_argument("--norm", type=float, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("experiment", help="run one of the experiment suites")
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--config", help="experiment config JSON (missing keys take defaults)")
    p.add_argument("--out-dir", default="results")
    p.set_defaults(func=cmd_experiment)
    return parser


def _apply_snapshot(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Let a ``certify --config snap.json`` run take its defaults from the snapshot."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[1:])
    if not known.config:
        return
    try:
        snap = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config {known.config}: {err}") from None
    snap = {k: v for k, v in snap.items() if k not in ("command", "config")}
    certify = parser._subparsers._group_actions[0].choices["certify"]
    for action in certify._actions:
        if action.dest in snap:
            action.required = False
    certify.set_defaults(**snap)


def main(argv=None) -> int:
    parser = make_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv[:1] == ["certify"]:
            _apply_snapshot(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ModelError, QCError, ConfigError, SaturationError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
