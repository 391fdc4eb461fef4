"""Synthetic sensor data with exact ground truth, and CSV ingestion."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import EmptyAfterFiltering, InfeasibleCorrelation, SchemaError
from .oracle import JointModel
from .risk import TrainingSet

__all__ = [
    "SyntheticSpec",
    "correlated_prior",
    "binary_joint",
    "mary_joint",
    "gen_binary",
    "gen_mary",
    "generate",
    "sample_from_joint",
    "Binning",
    "ingest_csv",
]

NOISE = (-1, 0, 1)
BINARY_BASE = {(-1, -1): 2, (-1, 1): 4, (1, -1): 6, (1, 1): 8}
BINARY_X_CARD = 8
MAX_REDRAWS = 100


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "binary_table3"
    n_train: int = 80
    n_test: int = 1000
    rho: float = 0.0
    p_H: float = 0.5
    p_G: float = 0.5
    m: int = 3
    s: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("binary_table3", "mary_sec4a3"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("n_train must be positive and n_test nonnegative")
        if not (0 < self.p_H < 1 and 0 < self.p_G < 1):
            raise ValueError("p_H and p_G are probabilities of +1 in (0, 1)")
        if self.kind == "mary_sec4a3" and self.m < 3:
            raise ValueError("the m-ary generator needs m >= 3")

    def to_dict(self) -> dict:
        return asdict(self)


def correlated_prior(p_h: float, p_g: float, rho: float) -> np.ndarray:
    """``p(h, g)`` with the given marginals of ``+1`` and correlation ``rho``.

    Rows index ``h = -1, +1``; columns ``g = -1, +1``.
    """
    ph = np.array([1.0 - p_h, p_h])
    pg = np.array([1.0 - p_g, p_g])
    scale = np.sqrt(ph.prod() * pg.prod())
    sign = np.outer([-1.0, 1.0], [-1.0, 1.0])
    prior = np.outer(ph, pg) + sign * rho * scale
    if np.any(prior < -1e-15):
        lo = -min(ph[0] * pg[0], ph[1] * pg[1]) / scale
        hi = min(ph[0] * pg[1], ph[1] * pg[0]) / scale
        raise InfeasibleCorrelation(
            f"rho={rho} outside the feasible range [{lo:.6g}, {hi:.6g}]"
        )
    return np.clip(prior, 0.0, None)


def _noisy_point(centre: int, x_card: int) -> np.ndarray:
    """Law of ``clip(centre + N, 1, x_card)`` with ``N`` uniform on {-1, 0, 1}."""
    out = np.zeros(x_card)
    for n in NOISE:
        out[min(max(centre + n, 1), x_card) - 1] += 1.0 / len(NOISE)
    return out


def binary_joint(spec: SyntheticSpec) -> JointModel:
    prior = correlated_prior(spec.p_H, spec.p_G, spec.rho)
    em = np.zeros((spec.s, 2, 2, BINARY_X_CARD))
    for (h, g), base in BINARY_BASE.items():
        em[:, (h + 1) // 2, (g + 1) // 2] = _noisy_point(base, BINARY_X_CARD)
    return JointModel(prior, em, (-1, 1), {"generator": spec.kind})


def mary_joint(spec: SyntheticSpec) -> JointModel:
    """Exact law of the m-ary generator after shifting values by ``+3``.

    Sensors ``1..4`` see ``m (H + 1) + 2 (G + 1) + N``.  Sensor ``4 + k``
    (``k = 1..m``) sees ``H + N`` when ``G - (H + 1)/2 = k - 1 (mod m)`` and
    ``0`` otherwise.
    """
    m = spec.m
    shift = 3
    x_card = 4 * m + 4
    s = 4 + m
    prior = np.full((2, m), 1.0 / (2 * m))
    em = np.zeros((s, 2, m, x_card))
    for hi, h in enumerate((-1, 1)):
        for g in range(m):
            centre = m * (h + 1) + 2 * (g + 1) + shift
            em[:4, hi, g] = _noisy_point(centre, x_card)
            for k in range(m):
                if (g - (h + 1) // 2) % m == k:
                    em[4 + k, hi, g] = _noisy_point(h + shift, x_card)
                else:
                    em[4 + k, hi, g, shift - 1] = 1.0
    return JointModel(prior, em, tuple(range(m)), {"generator": spec.kind, "shift": shift})


def sample_from_joint(jm: JointModel, n_train: int, n_test: int, rng):
    """Draw disjoint train and test sets; redraw until every class is present."""
    for _ in range(MAX_REDRAWS):
        xs, hs, gs = jm.sample(n_train + n_test, rng)
        train = slice(0, n_train)
        if set(np.unique(gs[train])) == set(jm.g_values) and len(np.unique(hs[train])) == 2:
            break
    else:
        raise EmptyAfterFiltering("a class stayed empty after repeated redraws")
    meta = {"generator": jm.meta.get("generator")}
    ts = TrainingSet(xs[train], hs[train], gs[train], jm.x_card, dict(meta))
    test = None
    if n_test:
        test = TrainingSet(xs[n_train:], hs[n_train:], gs[n_train:], jm.x_card, dict(meta))
    return ts, test


def gen_binary(spec: SyntheticSpec):
    """Returns ``(train, test, joint)`` for the four-stratum binary model."""
    jm = binary_joint(spec)
    ts, test = sample_from_joint(jm, spec.n_train, spec.n_test, np.random.default_rng(spec.seed))
    return ts, test, jm


def gen_mary(spec: SyntheticSpec):
    jm = mary_joint(spec)
    ts, test = sample_from_joint(jm, spec.n_train, spec.n_test, np.random.default_rng(spec.seed))
    for part in (ts, test):
        if part is not None:
            part.meta["shift"] = jm.meta["shift"]
    return ts, test, jm


def generate(spec: SyntheticSpec):
    return gen_binary(spec) if spec.kind == "binary_table3" else gen_mary(spec)


# ------------------------------------------------------------------ ingestion


@dataclass
class Binning:
    """Per-column discretization learned on one split and reusable on others."""

    columns: dict

    def to_json(self) -> str:
        return json.dumps(self.columns, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Binning":
        return cls(json.loads(text))

    @property
    def x_card(self) -> int:
        sizes = [
            c["levels"] if c["kind"] == "numeric" else len(c["categories"])
            for c in self.columns.values()
        ]
        return max(sizes)


def _fit_column(values: pd.Series, levels: int, strategy: str) -> dict:
    if pd.api.types.is_numeric_dtype(values):
        v = values.to_numpy(dtype=float)
        if strategy == "equal_width":
            return {"kind": "numeric", "strategy": strategy, "levels": levels,
                    "min": float(v.min()), "max": float(v.max())}
        if strategy == "equal_frequency":
            inner = np.quantile(v, np.linspace(0, 1, levels + 1)[1:-1])
            return {"kind": "numeric", "strategy": strategy, "levels": levels,
                    "edges": [float(e) for e in inner]}
        raise ValueError(f"unknown discretization strategy {strategy!r}")
    cats = sorted(str(c) for c in values.unique())
    return {"kind": "categorical", "categories": cats}


def _apply_column(values: pd.Series, rule: dict) -> np.ndarray:
    if rule["kind"] == "categorical":
        lookup = {c: k + 1 for k, c in enumerate(rule["categories"])}
        codes = values.astype(str).map(lookup)
        if codes.isna().any():
            raise SchemaError(f"unseen category in column {values.name!r}")
        return codes.to_numpy(dtype=int)
    v = values.to_numpy(dtype=float)
    levels = rule["levels"]
    if rule["strategy"] == "equal_width":
        span = rule["max"] - rule["min"]
        if span <= 0:
            return np.ones(len(v), dtype=int)
        bins = np.floor((v - rule["min"]) / span * levels).astype(int) + 1
    else:
        bins = np.searchsorted(np.asarray(rule["edges"]), v, side="right") + 1
    return np.clip(bins, 1, levels)


def _label_maps(schema: dict):
    try:
        features = list(schema["features"])
        h_col, h_pos = schema["h"]["column"], schema["h"]["positive"]
        g_col, g_map = schema["g"]["column"], schema["g"]["classes"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"schema is missing {exc}") from None
    if not features:
        raise SchemaError("schema lists no feature columns")
    if len(g_map) < 2:
        raise SchemaError("the private class map needs at least two classes")
    codes = [-1, 1] if len(g_map) == 2 else list(range(len(g_map)))
    raw_to_code = {}
    for code, raws in zip(codes, g_map.values()):
        for raw in raws if isinstance(raws, (list, tuple)) else [raws]:
            raw_to_code[str(raw)] = code
    return features, h_col, str(h_pos), g_col, raw_to_code


def ingest_csv(
    path,
    schema: dict,
    levels: int = 10,
    strategy: str = "equal_width",
    binning: Binning | None = None,
    sidecar=None,
) -> TrainingSet:
    """Load a CSV into a :class:`TrainingSet`.

    Rows with missing values in the selected columns, or whose private label
    is not in the class map, are dropped and counted in ``meta``.  Pass
    ``binning`` to reuse edges learned on another split; the learned edges
    are written to ``sidecar`` when given.
    """
    if levels < 1:
        raise ValueError("levels must be a positive integer")
    features, h_col, h_pos, g_col, g_lookup = _label_maps(schema)
    frame = pd.read_csv(path, skipinitialspace=True)
    missing = [c for c in features + [h_col, g_col] if c not in frame.columns]
    if missing:
        raise SchemaError(f"columns not found: {missing}")
    frame = frame[features + [h_col, g_col]]
    n_raw = len(frame)
    frame = frame.dropna()
    n_missing = n_raw - len(frame)
    g_codes = frame[g_col].astype(str).str.strip().map(g_lookup)
    keep = g_codes.notna()
    frame, g_codes = frame[keep], g_codes[keep]
    if frame.empty:
        raise EmptyAfterFiltering("no rows left after filtering")
    if binning is None:
        binning = Binning({c: _fit_column(frame[c], levels, strategy) for c in features})
    xs = np.column_stack([_apply_column(frame[c], binning.columns[c]) for c in features])
    hs = np.where(frame[h_col].astype(str).str.strip() == h_pos, 1, -1)
    if sidecar is not None:
        Path(sidecar).write_text(binning.to_json())
    meta = {
        "source": str(path),
        "dropped_missing": int(n_missing),
        "dropped_unmapped": int((~keep).sum()),
        "binning": binning,
    }
    return TrainingSet(xs, hs, g_codes.to_numpy(dtype=int), binning.x_card, meta)
