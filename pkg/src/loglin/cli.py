"""Command-line interface: ``loglin model|sample|face|fit|exp``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .estimation import (
    FitError,
    assumption_diagnostics,
    consensus,
    fit_global,
    fit_local,
    relative_mse,
)
from .experiments import (
    EqualityConfig,
    ExistenceConfig,
    Face4x4Config,
    RateConfig,
    strict_json,
    j_label,
    run_equality,
    run_existence,
    run_face4x4,
    run_rate,
)
from .faces import lattice_row_windows, local_face_analysis, smallest_face
from .io import (
    dumps,
    model_to_json,
    provenance,
    read_model,
    read_samples,
    validate_report,
    write_json,
    write_model,
    write_samples,
)
from .model import (
    BudgetExceeded,
    DataError,
    ModelError,
    build_model,
    cell_counts,
    downward_closure,
    lattice_model,
)
from .sampler import SamplerConfig, SamplerError, sample

EXIT_OK, EXIT_INVALID, EXIT_NONEXISTENCE = 0, 2, 3


def _emit(report: dict, args, schema: str | None = None, summary: str | None = None) -> None:
    if schema:
        validate_report(report, schema)
    text = dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    if args.json or not (args.out or summary):
        sys.stdout.write(text)
    elif summary:
        print(summary)


def _load_theta(path, n: int) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    theta = np.asarray(data["theta"] if isinstance(data, dict) else data, dtype=float)
    if theta.shape != (n,):
        raise DataError(f"theta file has {theta.size} entries, model has {n} parameters")
    return theta


# ------------------------------------------------------------------ model
def cmd_model_build(args) -> int:
    if args.lattice:
        r, c = (int(x) for x in args.lattice.lower().split("x"))
        model = lattice_model(r, c, args.levels)
    else:
        if not args.variables:
            raise ModelError("give --lattice or --variables")
        levels = [args.levels] * args.variables
        if args.edges is not None:
            edges = [tuple(int(v) - 1 for v in e.split("-")) for e in args.edges.split(",") if e]
            model = build_model(levels, edges=edges, labels=range(1, len(levels) + 1))
        else:
            gc = [[int(v) - 1 for v in d.split("-")] for d in (args.generating_class or "").split(",") if d]
            model = build_model(levels, generating_class=downward_closure(gc), labels=range(1, len(levels) + 1))
    doc = model_to_json(model)
    if args.out:
        write_model(model, args.out)
    if args.json or not args.out:
        sys.stdout.write(dumps(doc))
    else:
        print(f"wrote {args.out}: {model.p} variables, {model.n_params} parameters")
    return EXIT_OK


def cmd_model_show(args) -> int:
    model = read_model(args.model)
    info = model.describe()
    info["parameters_list"] = [j_label(model, k) for k in range(model.n_params)]
    if args.json:
        sys.stdout.write(dumps(info))
    else:
        print(f"variables {info['variables']}, cells {info['cells']}, parameters {info['parameters']}")
        for s in info["generating_class"]:
            print("  " + "-".join(map(str, s)))
    return EXIT_OK


# ----------------------------------------------------------------- sample
def cmd_sample(args) -> int:
    model = read_model(args.model)
    if args.theta:
        theta = _load_theta(args.theta, model.n_params)
    else:
        theta = np.random.default_rng(args.seed).uniform(-args.theta_scale, args.theta_scale, model.n_params)
    cfg = SamplerConfig(args.n, args.seed, args.method, args.burn_in, args.thinning)
    x = sample(model, theta, cfg)
    if not args.out:
        raise DataError("sample needs --out")
    write_samples(x, model, args.out)
    side = {"sampler": cfg.to_json(), "theta": theta.tolist(),
            "provenance": provenance({"command": "sample", **cfg.to_json(), "model": model_to_json(model)})}
    write_json(side, str(args.out) + ".json")
    print(f"wrote {len(x)} samples to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------- face
def cmd_face_find(args) -> int:
    model = read_model(args.model)
    x = read_samples(args.samples, model)
    face = smallest_face(cell_counts(x, model), model)
    rep = face.to_json()
    rep["provenance"] = provenance({"command": "face find", "model": model_to_json(model), "N": len(x)})
    verdict = "proper face: the MLE does not exist" if face.proper else "interior: the MLE exists"
    _emit(rep, args, "face", f"{verdict} (facial set {rep['facial_set_size']}/{model.n_cells}, "
                             f"dimension {rep['dimension']})")
    return EXIT_NONEXISTENCE if face.proper else EXIT_OK


def _lattice_shape(model) -> tuple[int, int]:
    for cols in range(1, model.p + 1):
        if model.p % cols == 0 and model.edges is not None:
            if set(model.edges) == set(lattice_model(model.p // cols, cols).edges):
                return model.p // cols, cols
    raise ModelError("'rows:W' subsets need a four-neighbour lattice model")


def _parse_subsets(text: str, model) -> list[list[int]]:
    if text.startswith("rows:"):
        rows, cols = _lattice_shape(model)
        return lattice_row_windows(rows, cols, int(text.split(":", 1)[1]))
    return [[int(v) for v in part.split(",")] for part in text.split(";") if part]


def cmd_face_local(args) -> int:
    model = read_model(args.model)
    subsets = _parse_subsets(args.subsets, model)
    x = read_samples(args.samples, model)
    rep = local_face_analysis(model, subsets, samples=x)
    out = rep.to_json()
    out["provenance"] = provenance({"command": "face local", "subsets": subsets, "N": len(x),
                                    "model": model_to_json(model)})
    _emit(out, args, "face", f"status {rep.status}; local {rep.local_dimensions}, "
                            f"extended {rep.extended_dimensions}, intersection {rep.face.dimension}")
    return EXIT_NONEXISTENCE if rep.proper else EXIT_OK


# -------------------------------------------------------------------- fit
def cmd_fit(args) -> int:
    model = read_model(args.model)
    x = read_samples(args.samples, model)
    kind = {"global": "global", "ps": "PS", "ps2": "PS2", "m1": "M1", "m2": "M2"}[args.kind]
    theta_star = _load_theta(args.theta_star, model.n_params) if args.theta_star else None
    report = {"kind": kind, "parameters": [j_label(model, k) for k in range(model.n_params)], "N": len(x)}
    if kind == "global":
        fit = fit_global(x, model)
        theta = fit.theta_hat
        report["fits"] = [fit.summary()]
        flagged = fit.nonexistence_flag
    else:
        ests = [fit_local(x, model, lab, kind) for lab in model.labels]
        c = consensus(ests, model)
        theta = c.theta_hat
        report.update(
            fits=[e.summary() for e in c.components],
            contributors=c.contributors.tolist(),
            poisoned=c.poisoned.tolist(),
            partial=c.partial,
        )
        flagged = c.any_poisoned
    report["theta_hat"] = theta.tolist()
    report["nonexistence_flag"] = bool(flagged)
    if theta_star is not None:
        report["relative_mse"] = relative_mse(np.nan_to_num(theta), theta_star)
        d = assumption_diagnostics(x, model, theta_star)
        report["diagnostics"] = {"D_max_hat": d.D_max_hat, "C_min_hat": d.C_min_hat, "d_v": d.d_v,
                                 "per_vertex": d.per_vertex}
    report["provenance"] = provenance({"command": f"fit {args.kind}", "model": model_to_json(model),
                                       "N": len(x)})
    report = strict_json(report)
    summary = f"{kind}: {'nonexistence flagged' if flagged else 'converged'}"
    if "relative_mse" in report:
        summary += f", relative MSE {report['relative_mse']:.4g}"
    _emit(report, args, "fit", summary)
    return EXIT_OK


# ------------------------------------------------------------- experiments
def cmd_exp(args) -> int:
    name = args.experiment
    if name == "face4x4":
        rep = run_face4x4(Face4x4Config(ordering=args.ordering, global_check=args.global_check))
        _emit(rep, args, "face4x4",
              f"ordering {rep['ordering']}: local {rep['local_dimensions']}, extended "
              f"{rep['extended_dimensions']}, intersection {rep['intersection_dimension']}, "
              f"matches reference {rep['matches_reference']}")
        return EXIT_OK
    if name == "equality":
        cfg = EqualityConfig(seed=args.seed if args.seed is not None else EqualityConfig.seed,
                             N=args.n or EqualityConfig.N)
        rep, table = run_equality(cfg)
        if args.csv:
            Path(args.csv).write_text(table)
        _emit(rep, args, "equality",
              f"max discrepancy hop 1 {rep['max_discrepancy_hop1']:.3g}, hop 2 (hypothesis holds) "
              f"{rep['max_discrepancy_hop2_hypothesis']:.3g}; hypothesis fails at {rep['hypothesis_fails_at']}")
        return EXIT_OK
    if name == "existence":
        kw = {}
        if args.seed is not None:
            kw["seed"] = args.seed
        if args.replicates:
            kw["replicates"] = args.replicates
        rep = run_existence(ExistenceConfig(**kw))
        _emit(rep, args, "existence", f"on-face exceeds off-face for every estimator: {rep['ordering_holds']}")
        return EXIT_OK
    if name == "rate":
        kw = {}
        if args.seed is not None:
            kw["seed"] = args.seed
        if args.replicates:
            kw["replicates"] = args.replicates
        rep = run_rate(RateConfig(**kw))
        _emit(rep, args, "rate", f"slope {rep['slope']:.3f}, sum d_v/|J| = {rep['efficiency_ratio']}")
        return EXIT_OK
    raise ValueError(name)


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loglin", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True, samples=False):
        if model:
            sp.add_argument("--model", required=True, help="model JSON")
        if samples:
            sp.add_argument("--samples", required=True, help="samples CSV")
        sp.add_argument("--out", help="output file")
        sp.add_argument("--json", action="store_true", help="print the JSON report to stdout")

    m = sub.add_parser("model", help="build or inspect model files").add_subparsers(dest="action", required=True)
    b = m.add_parser("build")
    common(b, model=False)
    b.add_argument("--lattice", help="ROWSxCOLS four-neighbour lattice")
    b.add_argument("--variables", type=int)
    b.add_argument("--levels", type=int, default=2)
    b.add_argument("--edges", help="comma-separated a-b pairs, 1-based")
    b.add_argument("--generating-class", help="comma-separated sets such as 1-2-3,3-4")
    b.set_defaults(func=cmd_model_build)
    s = m.add_parser("show")
    common(s)
    s.set_defaults(func=cmd_model_show)

    s = sub.add_parser("sample", help="draw synthetic samples")
    common(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--method", choices=["exact", "gibbs"], default="exact")
    s.add_argument("--burn-in", type=int, default=1000)
    s.add_argument("--thinning", type=int, default=10)
    s.add_argument("--theta", help="JSON file with a theta list")
    s.add_argument("--theta-scale", type=float, default=1.0, help="uniform(-s, s) theta when --theta is absent")
    s.set_defaults(func=cmd_sample)

    f = sub.add_parser("face", help="faces of the marginal cone").add_subparsers(dest="action", required=True)
    ff = f.add_parser("find")
    common(ff, samples=True)
    ff.set_defaults(func=cmd_face_find)
    fl = f.add_parser("local")
    common(fl, samples=True)
    fl.add_argument("--subsets", required=True, help="'rows:W' lattice bands or '1,2,3;3,4,5'")
    fl.set_defaults(func=cmd_face_local)

    ft = sub.add_parser("fit", help="global or composite likelihood fits")
    ft.add_argument("kind", choices=["global", "ps", "ps2", "m1", "m2"])
    common(ft, samples=True)
    ft.add_argument("--theta-star", help="JSON file with the true theta")
    ft.set_defaults(func=cmd_fit)

    e = sub.add_parser("exp", help="experiment drivers")
    e.add_argument("experiment", choices=["face4x4", "equality", "existence", "rate"])
    e.add_argument("--out")
    e.add_argument("--json", action="store_true")
    e.add_argument("--seed", type=int)
    e.add_argument("--n", type=int, help="sample size (equality study)")
    e.add_argument("--replicates", type=int)
    e.add_argument("--csv", help="estimate table (equality study)")
    e.add_argument("--ordering", choices=["auto", "canonical", "reversed"], default="auto")
    e.add_argument("--global-check", action="store_true", help="also solve the global face LP (slow)")
    e.set_defaults(func=cmd_exp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, DataError, BudgetExceeded, SamplerError, jsonschema.ValidationError,
            FileNotFoundError, KeyError) as exc:
        print(f"loglin: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FitError as exc:
        print(f"loglin: fit failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
