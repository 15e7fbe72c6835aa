"""Command line front end.

Thread pinning happens here, before numpy is imported anywhere in the
process: the single environment variable TRAINCERT_NUM_THREADS fans out
to the BLAS/OpenMP knobs.  All heavy imports are deferred into the
command handlers for the same reason.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

THREAD_ENV = "TRAINCERT_NUM_THREADS"


def _pin_threads():
    value = os.environ.get(THREAD_ENV)
    if value:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, value)


_pin_threads()


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip() != ""]


def _pair(text: str) -> list[int]:
    parts = _int_list(text.replace("x", ","))
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two integers like 100x100")
    return parts


def _centers(text: str) -> list[list[float]]:
    out = []
    for chunk in text.split(";"):
        coords = [float(v) for v in chunk.split(",")]
        if len(coords) != 2:
            raise argparse.ArgumentTypeError("centers look like x,y;x,y")
        out.append(coords)
    return out


def _add_experiment_flags(p: argparse.ArgumentParser):
    """Flags mirroring the experiment config; a config file overrides them."""
    p.add_argument("--config", metavar="JSON", help="config file (overrides flags)")
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset-kind", choices=("halfmoons", "blobs", "csv"))
    g.add_argument("--n-samples", type=int)
    g.add_argument("--noise-sd", type=float)
    g.add_argument("--centers", type=_centers, metavar="X,Y;X,Y")
    g.add_argument("--cluster-sd", type=float)
    g.add_argument("--data", metavar="CSV", help="dataset path for kind csv")
    g.add_argument("--label-column")
    g = p.add_argument_group("pipeline and model")
    g.add_argument("--poly-degree", type=int)
    g.add_argument("--standardize", action="store_const", const=True)
    g.add_argument("--hidden", type=_int_list, metavar="W1,W2")
    g = p.add_argument_group("training")
    g.add_argument("--alpha", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument(
        "--loss",
        choices=("squared_error", "binary_cross_entropy", "cross_entropy", "hinge"),
    )
    g.add_argument("--eta", type=float)
    g.add_argument("--clip-kappa", type=float)
    g.add_argument("--init-scale", type=float)
    g.add_argument("--train-seed", type=int)
    g = p.add_argument_group("perturbation model")
    g.add_argument("--model", choices=("bounded", "removal", "substitution"))
    g.add_argument("--n", type=int)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--nu", type=float)
    g.add_argument("--q", type=float)
    g.add_argument("--ladder", type=_int_list, metavar="N1,N2")
    g = p.add_argument_group("certification")
    g.add_argument("--method", choices=("ibp", "crown"))
    g.add_argument("--grid", type=_pair, metavar="NXxNY")
    g.add_argument("--backdoor-epsilon", type=float)
    g.add_argument("--privacy-epsilon", type=float)
    g.add_argument("--privacy-delta", type=float)
    g.add_argument("--privacy-beta", type=float)
    g.add_argument("--mechanism", choices=("laplace_global", "cauchy_smooth"))
    g = p.add_argument_group("enumeration and encoding")
    g.add_argument("--enumerate-kind", choices=("label_flips", "removals"))
    g.add_argument("--cap", type=int)
    g.add_argument("--relaxation", choices=("miqcp", "milp", "qcp", "lp"))
    g.add_argument("--horizon-w", type=int)
    g.add_argument("--step-p", type=int)
    g.add_argument("--bigm-margin", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="JSON", help="results document path")


def _flags_payload(args: argparse.Namespace) -> dict:
    """Nested config dict from the flags the user actually passed."""

    def put(d, path, value):
        if value is None:
            return
        for key in path[:-1]:
            d = d.setdefault(key, {})
        d[path[-1]] = value

    payload: dict = {}
    put(payload, ("dataset", "kind"), args.dataset_kind)
    put(payload, ("dataset", "n_samples"), args.n_samples)
    put(payload, ("dataset", "noise_sd"), args.noise_sd)
    put(payload, ("dataset", "centers"), args.centers)
    put(payload, ("dataset", "cluster_sd"), args.cluster_sd)
    put(payload, ("dataset", "path"), args.data)
    put(payload, ("dataset", "label_column"), args.label_column)
    put(payload, ("pipeline", "poly_degree"), args.poly_degree)
    put(payload, ("pipeline", "standardize"), args.standardize)
    put(payload, ("arch", "hidden"), args.hidden)
    put(payload, ("train", "alpha"), args.alpha)
    put(payload, ("train", "batch_size"), args.batch_size)
    put(payload, ("train", "epochs"), args.epochs)
    put(payload, ("train", "loss"), args.loss)
    put(payload, ("train", "eta"), args.eta)
    put(payload, ("train", "clip_kappa"), args.clip_kappa)
    put(payload, ("train", "init_scale"), args.init_scale)
    put(payload, ("train", "seed"), args.train_seed)
    put(payload, ("perturbation", "model"), args.model)
    put(payload, ("perturbation", "n"), args.n)
    put(payload, ("perturbation", "epsilon"), args.epsilon)
    put(payload, ("perturbation", "nu"), args.nu)
    put(payload, ("perturbation", "q"), args.q)
    put(payload, ("perturbation", "ladder"), args.ladder)
    put(payload, ("certify", "method"), args.method)
    put(payload, ("certify", "grid_resolution"), args.grid)
    put(payload, ("certify", "backdoor_epsilon"), args.backdoor_epsilon)
    put(payload, ("certify", "privacy", "epsilon"), args.privacy_epsilon)
    put(payload, ("certify", "privacy", "delta"), args.privacy_delta)
    put(payload, ("certify", "privacy", "beta"), args.privacy_beta)
    put(payload, ("certify", "privacy", "mechanism"), args.mechanism)
    put(payload, ("enumerate_oracle", "kind"), args.enumerate_kind)
    put(payload, ("enumerate_oracle", "cap"), args.cap)
    put(payload, ("encode", "relaxation"), args.relaxation)
    put(payload, ("encode", "horizon_w"), args.horizon_w)
    put(payload, ("encode", "step_p"), args.step_p)
    put(payload, ("encode", "bigM_margin"), args.bigm_margin)
    put(payload, ("seed",), args.seed)
    put(payload, ("output_path",), args.out)
    return payload


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _build_config(args: argparse.Namespace):
    from .config import ExperimentConfig, from_dict, to_dict
    from .errors import ConfigError

    # precedence: defaults < flags < config file.  Flags form partial
    # sections, so they are completed from the default config first.
    defaults = to_dict(ExperimentConfig())
    defaults.pop("enumerate_oracle"), defaults.pop("encode")
    payload = _deep_merge(defaults, _flags_payload(args))
    if args.config:
        try:
            with open(args.config) as fh:
                file_payload = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON: {e}") from e
        payload = _deep_merge(payload, file_payload)
    return from_dict(payload)


def _print_summary(doc):
    print(f"config {doc.config_hash}")
    widths = doc.train["widths_per_n"]
    for n in sorted(widths, key=int):
        print(
            f"n={n}: {doc.train['n_iterations']} iterations, "
            f"final width {widths[n][-1]:.6g}"
        )
    if doc.certify:
        acc = doc.certify.get("certified_accuracy")
        if acc is not None:
            print(f"certified accuracy {acc:.4f}")
        grid = doc.certify.get("grid")
        if grid:
            for n, count in sorted(grid["stable_per_n"].items(), key=lambda kv: int(kv[0])):
                print(f"certified-stable grid points at n={n}: {count}/{grid['n_points']}")
        backdoor = doc.certify.get("backdoor")
        if backdoor:
            print(
                f"backdoor-certified at eps={backdoor['epsilon_test']}: "
                f"{backdoor['certified']}/{backdoor['out_of']}"
            )


def _cmd_train(args) -> int:
    from .experiment import run_experiment

    doc = run_experiment(_build_config(args))
    _print_summary(doc)
    if args.out:
        print(f"results written to {args.out}")
    return 0


def _cmd_certify(args) -> int:
    import numpy as np

    from .certify import certified_accuracy, certify_stable
    from .data import CsvSchema, load_csv
    from .errors import ConfigError
    from .experiment import Pipeline, ResultsDocument

    doc = ResultsDocument.read(args.results)
    pi = doc.final_bounds()
    nominal = doc.final_params()
    pipeline = Pipeline.from_payload(doc.train["pipeline"])
    method = args.method or doc.config["certify"]["method"]
    if args.data:
        test = load_csv(args.data, CsvSchema(label_column=args.label_column or "label"))
        acc = certified_accuracy(pi, nominal, pipeline(test.features), test.labels, method)
        print(f"certified accuracy on {args.data}: {acc:.4f} ({test.n_samples} points)")
        return 0
    grid_info = (doc.certify or {}).get("grid")
    if not grid_info:
        raise ConfigError("results document has no grid; pass --data CSV instead")
    bbox = grid_info["bbox"]
    res = args.grid or grid_info["resolution"]
    gx = np.linspace(bbox[0][0], bbox[1][0], res[0])
    gy = np.linspace(bbox[0][1], bbox[1][1], res[1])
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    grid = pipeline(np.column_stack([xx.ravel(), yy.ravel()]))
    stable = int(sum(certify_stable(pi, nominal, g, method) for g in grid))
    print(f"certified-stable grid points: {stable}/{grid.shape[0]}")
    return 0


def _cmd_enumerate(args) -> int:
    import dataclasses

    from .config import EnumerateSpec
    from .experiment import run_experiment

    cfg = _build_config(args)
    if cfg.enumerate_oracle is None:
        cfg = dataclasses.replace(cfg, enumerate_oracle=EnumerateSpec())
    doc = run_experiment(cfg)
    e = doc.enumeration
    print(
        f"{e['kind']} n={e['n']}: {e['contained']}/{e['total']} retrainings "
        f"contained, worst excess {e['worst_excess']:.3e}"
    )
    if args.out:
        print(f"results written to {args.out}")
    return 0 if e["all_contained"] else 4


def _cmd_encode(args) -> int:
    import dataclasses

    from .config import EncodeSpec
    from .experiment import run_experiment

    cfg = _build_config(args)
    if cfg.encode is None:
        cfg = dataclasses.replace(cfg, encode=EncodeSpec())
    doc = run_experiment(cfg)
    for w in doc.encode["windows"]:
        line = (
            f"window [{w['window'][0]}, {w['window'][1]}] {w['relaxation']}: "
            f"{w['n_variables']} vars ({w['n_binaries']} binary), "
            f"{w['n_linear']} linear + {w['n_quadratic']} quadratic rows"
        )
        if "path" in w:
            line += f" -> {w['path']}"
        print(line)
    return 0


def _cmd_privacy(args) -> int:
    from .errors import ConfigError
    from .experiment import run_experiment

    cfg = _build_config(args)
    if cfg.certify.privacy is None:
        raise ConfigError("privacy run needs --privacy-epsilon (or config)")
    if cfg.perturbation.ladder is None:
        raise ConfigError("privacy run needs --ladder (or config)")
    doc = run_experiment(cfg)
    pv = doc.privacy
    print(
        f"mechanism {pv['mechanism']} epsilon={pv['epsilon']} "
        f"delta={pv['delta']} beta={pv['beta']:.6g}"
    )
    print(f"ladder {pv['ladder']}")
    hist = pv["stable_n_histogram"]
    for n in sorted(hist, key=int):
        print(f"stable at n'={n}: {hist[n]} points")
    if args.out:
        print(f"results written to {args.out}")
    return 0


def _cmd_gen(args) -> int:
    from .data import gen_blobs, gen_halfmoons, save_csv
    from .errors import ConfigError

    kind = args.dataset_kind or "halfmoons"
    seed = args.seed if args.seed is not None else 0
    n = args.n_samples if args.n_samples is not None else 128
    if kind == "halfmoons":
        noise = args.noise_sd if args.noise_sd is not None else 0.1
        ds = gen_halfmoons(n, noise, seed)
    elif kind == "blobs":
        centers = args.centers or [[-1.0, -1.0], [1.0, 1.0]]
        sd = args.cluster_sd if args.cluster_sd is not None else 0.3
        ds = gen_blobs(n, centers, sd, seed)
    else:
        raise ConfigError("gen supports halfmoons and blobs")
    if not args.out:
        raise ConfigError("gen requires --out CSV")
    save_csv(ds, args.out)
    print(f"wrote {ds.n_samples} samples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traincert",
        description="Certified robustness of SGD training to data poisoning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="interval-train and certify, write results")
    _add_experiment_flags(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("certify", help="certify points from a saved results document")
    p.add_argument("--results", required=True, metavar="JSON")
    p.add_argument("--data", metavar="CSV", help="test set to certify")
    p.add_argument("--label-column")
    p.add_argument("--grid", type=_pair, metavar="NXxNY")
    p.add_argument("--method", choices=("ibp", "crown"))
    p.set_defaults(handler=_cmd_certify)

    p = sub.add_parser("enumerate", help="validate bounds against exhaustive retraining")
    _add_experiment_flags(p)
    p.set_defaults(handler=_cmd_enumerate)

    p = sub.add_parser("encode", help="emit solver encodings of the reachable set")
    _add_experiment_flags(p)
    p.set_defaults(handler=_cmd_encode)

    p = sub.add_parser("privacy", help="stability ladder and noise calibration")
    _add_experiment_flags(p)
    p.set_defaults(handler=_cmd_privacy)

    p = sub.add_parser("gen", help="generate a dataset CSV")
    p.add_argument("--dataset-kind", choices=("halfmoons", "blobs"))
    p.add_argument("--n-samples", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--centers", type=_centers, metavar="X,Y;X,Y")
    p.add_argument("--cluster-sd", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="CSV")
    p.set_defaults(handler=_cmd_gen)

    return parser


def main(argv=None) -> int:
    from .errors import ConfigError, DataError, InvariantError

    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except InvariantError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
