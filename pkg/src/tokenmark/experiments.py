"""Config-driven experiment sweeps with byte-reproducible outputs.

A single JSON config declares every sweep and the root seed; keys, text
randomness, and Monte-Carlo draws are all derived from named paths under
that root, so re-running the same config reproduces every output file
byte for byte. Results are CSV (LF line endings, '.' decimal separator,
mandatory header) plus a manifest recording the config digest and library
versions; deliberately no timestamps or hostnames, which would break
reproducibility for no benefit.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import importlib.metadata
import json
import platform
import re
from pathlib import Path

import numpy as np

from .detector import (closed_statistics, closed_threshold, open_statistics,
                       open_threshold)
from .errors import InvalidInputError
from .keystream import CLOSED, FRESH_SUPPORT, OPEN, WatermarkKey
from .seeds import derive_master_seed, derive_seed, rng_for
from .sparsemean import POWER_CSV_HEADER, PowerPoint, rejection_rate, wilson_interval
from .textgen import GenerationRecord, condition_lhs, generate_many, uniform_source

try:
    _PKG_VERSION = importlib.metadata.version("tokenmark")
except importlib.metadata.PackageNotFoundError:
    _PKG_VERSION = "unknown"

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

SOUNDNESS_HEADER = ["scheme", "delta", "d", "n", "texts", "fpr", "ci_lo", "ci_hi"]
CLOSED_COMPLETENESS_HEADER = ["scheme", "n", "d", "delta", "texts", "gamma",
                              "power", "ci_lo", "ci_hi"]
OPEN_COMPLETENESS_HEADER = ["scheme", "n", "d", "epsilon", "k", "delta", "texts",
                            "power", "ci_lo", "ci_hi"]


def load_config(path) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read experiment config {path}: {exc}") from exc
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    if not isinstance(config, dict):
        raise InvalidInputError("config must be a JSON object")
    if "root_seed" not in config:
        raise InvalidInputError("config needs a root_seed")
    experiments = config.get("experiments")
    if not isinstance(experiments, list) or not experiments:
        raise InvalidInputError("config needs a non-empty experiments list")
    seen = set()
    for exp in experiments:
        if not isinstance(exp, dict) or "name" not in exp or "type" not in exp:
            raise InvalidInputError("each experiment needs a name and a type")
        name = exp["name"]
        if not _NAME_RE.match(name):
            raise InvalidInputError(f"experiment name {name!r} is not a safe file stem")
        if name in seen:
            raise InvalidInputError(f"duplicate experiment name {name!r}")
        seen.add(name)
        if exp["type"] not in _RUNNERS:
            raise InvalidInputError(f"unknown experiment type {exp['type']!r}")


def _require(exp: dict, *keys):
    vals = []
    for key in keys:
        if key not in exp:
            raise InvalidInputError(f"experiment {exp['name']!r} is missing {key!r}")
        vals.append(exp[key])
    return vals


def _soundness(exp: dict, root, scheme: str) -> tuple[list[str], list[list]]:
    d, n, texts, deltas = _require(exp, "d", "n", "texts", "deltas")
    name = exp["name"]
    if scheme == CLOSED:
        key = WatermarkKey(derive_master_seed(root, name, "key"), d=d, scheme=CLOSED)
    else:
        key = WatermarkKey(derive_master_seed(root, name, "key"), d=d, scheme=OPEN,
                           epsilon=float(exp.get("epsilon", 0.5)),
                           k=int(exp.get("k", 1)), support_mode=FRESH_SUPPORT)
    tokens = generate_many(uniform_source(d), n, None, texts,
                           rng_for(root, name, "texts"))
    if scheme == CLOSED:
        z = closed_statistics(key, tokens)
    else:
        z = open_statistics(key, tokens)
    rows = []
    for delta in deltas:
        if scheme == CLOSED:
            thr = closed_threshold(n, delta)
        else:
            thr = open_threshold(n, delta, key.epsilon)
        hits = int((z >= thr).sum())
        lo, hi = wilson_interval(hits, texts)
        rows.append([scheme, delta, d, n, texts, hits / texts, lo, hi])
    rows.sort(key=lambda r: r[1])
    return SOUNDNESS_HEADER, rows


def _closed_completeness(exp: dict, root) -> tuple[list[str], list[list]]:
    d, n_grid, texts, delta = _require(exp, "d", "n_grid", "texts", "delta")
    name = exp["name"]
    key = WatermarkKey(derive_master_seed(root, name, "key"), d=d, scheme=CLOSED)
    model = uniform_source(d)
    rows = []
    for n in sorted(int(n) for n in n_grid):
        tokens = generate_many(model, n, key, texts, rng_for(root, name, "texts", n))
        z = closed_statistics(key, tokens)
        hits = int((z >= closed_threshold(n, delta)).sum())
        lo, hi = wilson_interval(hits, texts)
        record = GenerationRecord(tokens=tokens[0], per_step_pstar=np.full(n, 1.0 / d),
                                  watermarked=True, scheme=CLOSED, d=d)
        rows.append([CLOSED, n, d, delta, texts, condition_lhs(record, delta),
                     hits / texts, lo, hi])
    return CLOSED_COMPLETENESS_HEADER, rows


def _open_completeness(exp: dict, root) -> tuple[list[str], list[list]]:
    d, n_grid, texts, delta, epsilon, k = _require(
        exp, "d", "n_grid", "texts", "delta", "epsilon", "k")
    name = exp["name"]
    key = WatermarkKey(derive_master_seed(root, name, "key"), d=d, scheme=OPEN,
                       epsilon=float(epsilon), k=int(k), support_mode=FRESH_SUPPORT)
    model = uniform_source(d)
    rows = []
    for n in sorted(int(n) for n in n_grid):
        tokens = generate_many(model, n, key, texts, rng_for(root, name, "texts", n))
        z = open_statistics(key, tokens)
        hits = int((z >= open_threshold(n, delta, key.epsilon)).sum())
        lo, hi = wilson_interval(hits, texts)
        rows.append([OPEN, n, d, key.epsilon, key.k, delta, texts,
                     hits / texts, lo, hi])
    return OPEN_COMPLETENESS_HEADER, rows


def _sparse_power(exp: dict, root, workers: int) -> tuple[list[str], list[list]]:
    d, k, epsilon, alpha, n_grid, trials, tests = _require(
        exp, "d", "k", "epsilon", "alpha", "n_grid", "trials", "tests")
    seed = derive_seed(root, exp["name"])
    points = [(test, n) for test in sorted(set(tests))
              for n in sorted(set(int(n) for n in n_grid))]

    def run_point(point):
        test, n = point
        hits, total = rejection_rate(test, "Ha", n, d, k, float(epsilon),
                                     float(alpha), int(trials), seed)
        lo, hi = wilson_interval(hits, total)
        return PowerPoint(test=test, n=n, d=d, k=k, epsilon=float(epsilon),
                          alpha=float(alpha), power=hits / total, ci_lo=lo, ci_hi=hi)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_point, points))
    else:
        results = [run_point(point) for point in points]
    return POWER_CSV_HEADER, [p.to_row() for p in results]


_RUNNERS = {
    "closed-soundness": lambda exp, root, workers: _soundness(exp, root, CLOSED),
    "open-soundness": lambda exp, root, workers: _soundness(exp, root, OPEN),
    "closed-completeness": lambda exp, root, workers: _closed_completeness(exp, root),
    "open-completeness": lambda exp, root, workers: _open_completeness(exp, root),
    "sparse-power": _sparse_power,
}


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(cell) for cell in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", newline="\n")


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_experiments(config: dict, out_dir) -> dict:
    """Execute every declared sweep and write CSVs plus a manifest into
    ``out_dir``. Returns the manifest. Identical config implies identical
    bytes in every output file, regardless of the worker count."""
    validate_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = config["root_seed"]
    workers = int(config.get("workers", 1))
    if workers < 1:
        raise InvalidInputError("workers must be at least 1")
    outputs = {}
    for exp in config["experiments"]:
        header, rows = _RUNNERS[exp["type"]](exp, root, workers)
        filename = f"{exp['name']}.csv"
        _write_csv(out / filename, header, rows)
        outputs[exp["name"]] = filename
    manifest = {
        "config_digest": config_digest(config),
        "root_seed": root,
        "workers": workers,
        "outputs": dict(sorted(outputs.items())),
        "versions": {
            "tokenmark": _PKG_VERSION,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
