"""Market files, experiment configs, CSV output and run manifests.

Market file (JSON)::

    {
      "m": 10000,
      "ads": [
        {"id": "cpc-0", "bid": 1.0, "price_type": "CPC",
         "learning": {"impressions": 100000, "responses": 97},
         "prior": {"kind": "uniform01"}},
        {"id": "cpa-0", "bid": 10.0, "price_type": "CPA",
         "posterior": {"s_mean": 1e-4, "s_var": 1e-9}}
      ],
      "covariance": [[...], [...]]
    }

Each ad gives either ``posterior`` moments directly or a ``learning``
record plus an optional ``prior`` (``uniform01`` by default; also
``truncated_uniform`` with lo/hi and ``truncated_gaussian`` with mu/sigma).
``covariance`` is optional: an n x n matrix in money squared.

Experiment config (JSON) holds any subset of the ExperimentConfig fields;
priors use the same objects as above.
"""

from __future__ import annotations

import csv
import io
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .model import AdSpec, LearningRecord, MarketProblem, PosteriorSummary, PriorSpec, validate_market
from .posterior import QuadratureConfig, posterior
from .simulator import ExperimentConfig


class FormatError(ValueError):
    pass


def fmt(x) -> str:
    """12 significant digits for reals, plain text for everything else."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: top level must be an object")
    return data


def market_from_dict(data: dict, cfg: QuadratureConfig = QuadratureConfig()) -> MarketProblem:
    try:
        ads, posts = [], []
        for entry in data["ads"]:
            ads.append(AdSpec(str(entry["id"]), float(entry["bid"]), entry.get("price_type", "CPC")))
            if "posterior" in entry:
                p = entry["posterior"]
                posts.append(PosteriorSummary.from_moments(float(p["s_mean"]), float(p["s_var"])))
            elif "learning" in entry:
                rec = LearningRecord(int(entry["learning"]["impressions"]), int(entry["learning"]["responses"]))
                prior = PriorSpec.from_dict(entry.get("prior", {"kind": "uniform01"}))
                posts.append(posterior(prior, rec, cfg))
            else:
                raise FormatError(f"ad {entry['id']!r} needs 'posterior' or 'learning'")
        m = data["m"]
        if not isinstance(m, int) or isinstance(m, bool):
            raise FormatError("m must be an integer")
        market = MarketProblem(ads, m, posts, data.get("covariance"))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid market: {exc!r}") from exc
    return validate_market(market)


def load_market(path) -> MarketProblem:
    return market_from_dict(_load_json(path))


def load_experiment(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(_load_json(path))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid experiment config {path}: {exc}") from exc


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    return buf.getvalue()


def write_csv(path: Path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))
    return path


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path: Path, command: str, config, seed, started: str, outputs) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "python": platform.python_version(),
        "master_seed": seed,
        "config": config,
        "started": started,
        "finished": now_iso(),
        "outputs": [str(p) for p in outputs],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
