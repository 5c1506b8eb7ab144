"""Command line interface: ``matobf <command> [flags]``.

Every command writes into ``--out`` (a directory) through a staging
directory that is renamed into place only on success, and records the fully
resolved configuration in ``run-meta.json``.

Exit codes: 0 success, 2 usage/configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import (
    ATTACK_CSV_HEADER,
    GeneratorSpec,
    Scenario,
    attack_csv_row,
    reid_csv,
    reidentify,
    run_attack_scenario,
)
from .dataset import (
    DEFAULT_STYLE,
    SHIFTED_STYLE,
    SplitSpec,
    generate_synthetic,
    load_dataset_dir,
    read_manifest,
    save_dataset_dir,
    split_dataset,
    style_from_dict,
    style_to_dict,
)
from .decomp import PcaBasis, fit_pca, load_basis, save_basis
from .errors import ConfigError, MatobfError
from .imageio import save_pgm
from .metrics import format_float, privacy_report
from .obfuscate import Method, ObfuscationPolicy, mix_seed, obfuscate_batch, policy_permutation, write_obfuscated_dir
from .probe import TrainConfig, evaluate, save_classifier, train_classifier

RUN_META = "run-meta.json"
BASIS_FILE = "basis.pca1"
STYLES = {"default": DEFAULT_STYLE, "shifted": SHIFTED_STYLE}

DEFAULTS = {
    "common": {"seed": 0, "threads": 1},
    "synth": {"per_class": 100, "size": 32, "height": None, "width": None, "noise": 0.05, "style": "default"},
    "fit-pca": {"n": 16},
    "obfuscate": {"n": None, "basis": None, "randomize": False, "previews": 0},
    "metrics": {"normalize": "auto"},
    "classify": {"split": "0.5,0.1,0.4", "epochs": 100, "batch_size": 32, "lr": 0.05, "l2": 1e-4},
    "attack": {
        "scenario": "same,shifted",
        "method": "svd-u,svd-vh,svd-sum,pca,pca-sc",
        "n": 32,
        "seeds": None,
        "split": "0.6,0.2,0.2",
        "randomize": False,
        "attacker_per_class": 100,
        "lam": 1e-2,
    },
    "reid": {"method": "pca", "n": 16, "basis": None, "randomize": False, "probes": 50},
    "pipeline": {},
}

PIPELINE_DEFAULTS = {
    "data": {"synthetic": {"per_class": 250, "size": 32, "noise": 0.05, "style": "default"}},
    "split": [0.5, 0.1, 0.4],
    "methods": ["svd-u", "svd-vh", "svd-sum", "pca", "pca-sc"],
    "n_components": 16,
    "randomize": False,
    "classifier": {"epochs": 100, "batch_size": 32, "lr": 0.05, "l2": 1e-4},
    "attack": {"scenarios": ["same", "shifted"], "seeds": None, "attacker_per_class": 100, "lambda": 1e-2},
    "reid_probes": 20,
    "previews": 4,
}


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------- helpers


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@contextmanager
def staged_dir(out):
    """Yield a temp directory that replaces ``out`` only if the body succeeds."""
    out = Path(out)
    if out.exists():
        if not out.is_dir():
            raise UsageError(f"--out {out} exists and is not a directory")
        if any(out.iterdir()) and not (out / RUN_META).exists():
            raise UsageError(f"--out {out} is a non-empty directory not created by this tool")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp"))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def _parse_fractions(text) -> list[float]:
    if isinstance(text, str):
        parts = [float(p) for p in text.split(",")]
    else:
        parts = [float(p) for p in text]
    if len(parts) != 3:
        raise UsageError(f"split needs three fractions, got {text!r}")
    return parts


def _split(fracs, seed) -> SplitSpec:
    return SplitSpec(*_parse_fractions(fracs), seed=seed)


def _csv_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _method(text) -> Method:
    try:
        return Method(text)
    except ValueError:
        raise UsageError(f"unknown method {text!r}; choose from {[m.value for m in Method]}") from None


def _load_basis_arg(path) -> PcaBasis:
    path = Path(path)
    if path.is_dir():
        path = path / BASIS_FILE
    if not path.exists():
        raise UsageError(f"basis file {path} does not exist")
    return load_basis(path)[0]


def _resolve_basis(method: Method, n, basis_path, fit_data) -> PcaBasis | None:
    """Load (and truncate) a basis, or fit one on ``fit_data`` when no file is given."""
    if not method.is_pca:
        return None
    if basis_path:
        basis = _load_basis_arg(basis_path)
        if n is None:
            return basis
        if n > basis.n:
            raise UsageError(f"--n {n} exceeds the {basis.n} components stored in {basis_path}")
        return basis.truncate(n)
    if n is None:
        raise UsageError(f"{method.value} needs --n or --basis")
    return fit_pca(fit_data, n)


def _generator_for(data_dir, dims) -> GeneratorSpec:
    """Generator parameters recorded by ``synth``, or defaults at the data's size."""
    gen = read_manifest(data_dir).get("generator")
    if gen:
        return GeneratorSpec(gen["height"], gen["width"], gen["noise_sigma"], style_from_dict(gen["style"]))
    return GeneratorSpec(dims[0], dims[1])


def _write_previews(images, out_dir: Path, count: int, prefix: str) -> None:
    if count <= 0:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images[:count]):
        save_pgm(img, out_dir / f"{prefix}_{i:03d}.pgm", rescale=True)


# ---------------------------------------------------------------- commands


def cmd_synth(cfg, out: Path) -> dict:
    h = cfg["height"] or cfg["size"]
    w = cfg["width"] or cfg["size"]
    if cfg["style"] not in STYLES:
        raise UsageError(f"unknown style {cfg['style']!r}")
    style = STYLES[cfg["style"]]
    ds = generate_synthetic(cfg["per_class"], h, w, cfg["noise"], cfg["seed"], style)
    generator = {"height": h, "width": w, "noise_sigma": cfg["noise"], "seed": cfg["seed"],
                 "per_class": cfg["per_class"], "style": style_to_dict(style)}
    save_dataset_dir(ds, out, "pgm", extra={"generator": generator})
    return {"images": len(ds)}


def cmd_fit_pca(cfg, out: Path) -> dict:
    ds = load_dataset_dir(cfg["data"])
    basis = fit_pca(ds, cfg["n"])
    save_basis(basis, out / BASIS_FILE)
    return {"n": basis.n, "source_dims": list(basis.source_dims)}


def cmd_obfuscate(cfg, out: Path) -> dict:
    ds = load_dataset_dir(cfg["data"])
    method = _method(cfg["method"])
    if method is Method.SVD_SUM and ds.shape[0] != ds.shape[1]:
        raise ConfigError(f"svd-sum requires square images, got {ds.shape[0]}x{ds.shape[1]}")
    basis = _resolve_basis(method, cfg["n"], cfg["basis"], ds)
    policy = ObfuscationPolicy(method, basis.n if basis else None, cfg["randomize"], cfg["seed"])
    obf = obfuscate_batch(policy, basis, ds, threads=cfg["threads"])
    write_obfuscated_dir(obf, out, policy)
    if basis is not None:
        perm = policy_permutation(policy)
        save_basis(basis, out / BASIS_FILE, None if perm is None else perm.mapping)
    _write_previews(obf.images, out / "previews", cfg["previews"], "obf")
    return {"images": len(obf), "method": method.value}


NORMALIZE = {"auto": None, "always": True, "never": False}


def cmd_metrics(cfg, out: Path) -> dict:
    if cfg["normalize"] not in NORMALIZE:
        raise UsageError(f"--normalize must be one of {list(NORMALIZE)}")
    a = load_dataset_dir(cfg["a"])
    b = load_dataset_dir(cfg["b"])
    report = privacy_report(a.images, b.images, NORMALIZE[cfg["normalize"]], threads=cfg["threads"])
    (out / "metrics.csv").write_text(report.to_csv())
    return report.summary()


def cmd_classify(cfg, out: Path) -> dict:
    ds = load_dataset_dir(cfg["data"])
    train, val, test = split_dataset(ds, _split(cfg["split"], cfg["seed"]))
    tc = TrainConfig(cfg["epochs"], cfg["batch_size"], cfg["lr"], cfg["l2"], cfg["seed"])
    clf = train_classifier(train, val, tc)
    acc, confusion = evaluate(clf, test)
    save_classifier(clf, out / "classifier.clf1")
    result = {"accuracy": acc, "confusion": confusion.tolist(), "test_size": len(test)}
    _dump_json(result, out / "classify.json")
    return result


def cmd_attack(cfg, out: Path) -> dict:
    ds = load_dataset_dir(cfg["data"])
    scenarios = [Scenario(s) for s in _csv_list(cfg["scenario"])]
    methods = [_method(m) for m in _csv_list(cfg["method"])]
    seeds = [int(s) for s in _csv_list(cfg["seeds"])] if cfg["seeds"] is not None else [cfg["seed"]]
    gen = _generator_for(cfg["data"], ds.shape)
    rows = [ATTACK_CSV_HEADER]
    for method in methods:
        for seed in seeds:
            train, _, test = split_dataset(ds, _split(cfg["split"], seed))
            basis = fit_pca(train, cfg["n"]) if method.is_pca else None
            policy = ObfuscationPolicy(method, cfg["n"] if method.is_pca else None, cfg["randomize"], seed)
            for sc in scenarios:
                rep = run_attack_scenario(sc, policy, basis, test, seed, gen,
                                          cfg["attacker_per_class"], cfg["lam"], cfg["threads"])
                rows.append(attack_csv_row(sc, policy, seed, rep))
    (out / "attack.csv").write_text("\n".join(rows) + "\n")
    return {"rows": len(rows) - 1}


def reid_probe_seed(seed: int, i: int) -> int:
    # distinct from the dataset's per-item seeds mix_seed(seed, i)
    return mix_seed(mix_seed(seed, 1 << 32), i)


def cmd_reid(cfg, out: Path) -> dict:
    ds = load_dataset_dir(cfg["data"])
    method = _method(cfg["method"])
    basis = _resolve_basis(method, cfg["n"] if method.is_pca else None, cfg["basis"], ds)
    policy = ObfuscationPolicy(method, basis.n if basis else None, cfg["randomize"], cfg["seed"])
    obf = obfuscate_batch(policy, basis, ds, threads=cfg["threads"])
    n_probes = min(cfg["probes"], len(ds))
    results = [
        reidentify(ds.images[i], policy, basis, obf, reid_probe_seed(cfg["seed"], i), true_index=i)
        for i in range(n_probes)
    ]
    (out / "reid.csv").write_text(reid_csv(results))
    return {"probes": n_probes, "exact_match_rate": float(np.mean([r.exact_match for r in results])) if results else None}


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for k, v in override.items():
        merged[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return merged


def cmd_pipeline(cfg, out: Path) -> dict:
    """synth/load -> split -> fit -> obfuscate -> classify -> metrics -> attack -> reid."""
    pc = _merge(PIPELINE_DEFAULTS, cfg.get("pipeline", {}))
    seed, threads = cfg["seed"], cfg["threads"]
    data = pc["data"]
    if "dir" in data:
        ds = load_dataset_dir(data["dir"])
        gen = _generator_for(data["dir"], ds.shape)
    else:
        syn = data["synthetic"]
        gen = GeneratorSpec(syn["size"], syn["size"], syn["noise"], STYLES[syn.get("style", "default")])
        ds = generate_synthetic(syn["per_class"], gen.h, gen.w, gen.noise_sigma, seed, gen.style)
    split = _split(pc["split"], seed)
    methods = [_method(m) for m in pc["methods"]]
    n = pc["n_components"]
    ccfg = pc["classifier"]
    tc = TrainConfig(ccfg["epochs"], ccfg["batch_size"], ccfg["lr"], ccfg["l2"], seed)
    acfg = pc["attack"]
    attack_seeds = acfg["seeds"] if acfg["seeds"] is not None else [seed]
    for m in methods:
        ObfuscationPolicy(m, n if m.is_pca else None, pc["randomize"], seed)
    if any(m is Method.SVD_SUM for m in methods) and ds.shape[0] != ds.shape[1]:
        raise ConfigError("svd-sum requires square images")

    train, val, test = split_dataset(ds, split)
    basis = fit_pca(train, n) if any(m.is_pca for m in methods) else None
    if basis is not None:
        save_basis(basis, out / BASIS_FILE)

    summary = {"dataset": {"images": len(ds), "height": ds.shape[0], "width": ds.shape[1],
                           "split": [len(train), len(val), len(test)]}, "methods": {}}
    clf = train_classifier(train, val, tc)
    summary["baseline_accuracy"] = evaluate(clf, test)[0]
    save_classifier(clf, out / "original.clf1")
    _write_previews(test.images, out / "previews", pc["previews"], "original")

    attack_rows = [ATTACK_CSV_HEADER]
    reid_rows = []
    for m in methods:
        policy = ObfuscationPolicy(m, n if m.is_pca else None, pc["randomize"], seed)
        parts = [obfuscate_batch(policy, basis, d, threads=threads) for d in (train, val, test)]
        clf = train_classifier(parts[0], parts[1], tc)
        acc, confusion = evaluate(clf, parts[2])
        save_classifier(clf, out / f"{m.value}.clf1")
        report = privacy_report(test.images, parts[2].images, threads=threads)
        (out / f"metrics-{m.value}.csv").write_text(report.to_csv())
        _write_previews(parts[2].images, out / "previews", pc["previews"], m.value)

        attacks = {}
        for s in attack_seeds:
            attack_policy = replace(policy, master_seed=s)
            for sc in acfg["scenarios"]:
                rep = run_attack_scenario(sc, attack_policy, basis, test, s, gen,
                                          acfg["attacker_per_class"], acfg["lambda"], threads)
                attack_rows.append(attack_csv_row(sc, attack_policy, s, rep))
                attacks.setdefault(Scenario(sc).value, []).append(rep.summary())

        probes = min(pc["reid_probes"], len(test))
        for i in range(probes):
            r = reidentify(test.images[i], policy, basis, parts[2], reid_probe_seed(seed, i), true_index=i)
            reid_rows.append(r)
        exact = [r.exact_match for r in reid_rows[-probes:]] if probes else []
        summary["methods"][m.value] = {
            "accuracy": acc,
            "confusion": confusion.tolist(),
            "obfuscation": report.summary(),
            "attacks": attacks,
            "reid_exact_match_rate": float(np.mean(exact)) if exact else None,
        }
    (out / "attack.csv").write_text("\n".join(attack_rows) + "\n")
    (out / "reid.csv").write_text(reid_csv(reid_rows))
    _dump_json(_json_safe(summary), out / "summary.json")
    return {"methods": [m.value for m in methods]}


def _json_safe(obj):
    """Replace non-finite floats with their string form so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return format_float(obj)
    return obj


COMMANDS = {
    "synth": cmd_synth,
    "fit-pca": cmd_fit_pca,
    "obfuscate": cmd_obfuscate,
    "metrics": cmd_metrics,
    "classify": cmd_classify,
    "attack": cmd_attack,
    "reid": cmd_reid,
    "pipeline": cmd_pipeline,
}

# options that must be present after merging flags, config and defaults
REQUIRED = {
    "fit-pca": ["data"],
    "obfuscate": ["data", "method"],
    "metrics": ["a", "b"],
    "classify": ["data"],
    "attack": ["data"],
    "reid": ["data"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matobf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for batch work (default 1)")
    common.add_argument("--config", help="JSON file with option values; flags take precedence")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, argument_default=argparse.SUPPRESS)

    p = add("synth", "generate the synthetic two-class dataset as PGM files")
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--size", type=int, help="square image size (default 32)")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--noise", type=float, help="Gaussian noise sigma (default 0.05)")
    p.add_argument("--style", choices=sorted(STYLES))

    p = add("fit-pca", "fit a PCA basis on a dataset directory")
    p.add_argument("--data")
    p.add_argument("--n", type=int)

    p = add("obfuscate", "obfuscate a dataset directory")
    p.add_argument("--data")
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--n", type=int)
    p.add_argument("--basis", help="PCA1 file (or directory holding basis.pca1)")
    p.add_argument("--randomize", action="store_true")
    p.add_argument("--previews", type=int, help="number of rescaled PGM previews to write")

    p = add("metrics", "SSIM/PSNR between two dataset directories")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--normalize", choices=sorted(NORMALIZE))

    p = add("classify", "train and evaluate the linear probe on a dataset directory")
    p.add_argument("--data")
    p.add_argument("--split", help="train,val,test fractions")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)

    p = add("attack", "simulate reconstruction attacks")
    p.add_argument("--data", help="original dataset directory (victim data)")
    p.add_argument("--scenario", help="comma list of same,shifted")
    p.add_argument("--method", help="comma list of methods")
    p.add_argument("--n", type=int)
    p.add_argument("--seeds", help="comma list of seeds (default: --seed)")
    p.add_argument("--split")
    p.add_argument("--randomize", action="store_true")
    p.add_argument("--attacker-per-class", dest="attacker_per_class", type=int)
    p.add_argument("--lambda", dest="lam", type=float)

    p = add("reid", "re-identification attack against an obfuscated dataset")
    p.add_argument("--data")
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--n", type=int)
    p.add_argument("--basis")
    p.add_argument("--randomize", action="store_true")
    p.add_argument("--probes", type=int)

    add("pipeline", "run the full experiment from a JSON config")
    return parser


def resolve_config(command: str, ns: argparse.Namespace) -> dict:
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    file_cfg = {}
    if getattr(ns, "config", None):
        try:
            file_cfg = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
    cfg = {**DEFAULTS["common"], **DEFAULTS[command]}
    if command == "pipeline":
        top = {k: file_cfg[k] for k in ("seed", "threads", "out") if k in file_cfg}
        cfg.update(top)
        cfg["pipeline"] = {k: v for k, v in file_cfg.items() if k not in ("seed", "threads", "out")}
    else:
        unknown = set(file_cfg) - set(cfg) - {"out", "data", "method", "a", "b"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(flags)
    for key in REQUIRED.get(command, []) + ["out"]:
        if cfg.get(key) is None:
            raise UsageError(f"missing required option --{key.replace('_', '-')}")
    if cfg["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    if not 0 <= cfg["seed"] < 1 << 64:
        raise UsageError("--seed must be a 64-bit unsigned integer")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(ns.command, ns)
        with staged_dir(cfg["out"]) as tmp:
            result = COMMANDS[ns.command](cfg, tmp)
            meta = {"command": ns.command, "version": __version__, "config": cfg}
            _dump_json(_json_safe(meta), tmp / RUN_META)
    except ConfigError as exc:
        print(f"matobf {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (MatobfError, OSError, ValueError) as exc:
        print(f"matobf {ns.command}: failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_json_safe(result), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
