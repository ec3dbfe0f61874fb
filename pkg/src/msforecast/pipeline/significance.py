"""Significance reports assembled from per-method metric CSVs."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DegenerateStatisticError, InsufficientDataError, ParseError
from ..metrics import METRICS, read_metric_csv
from ..stats import (HIGHER_IS_BETTER, PairedScores, RankTable, average_ranks, bayesian_signed_rank, friedman,
                     nemenyi_cd, oriented_diffs, rope_for, significant_pairs)

METRIC_ALIASES = {"ade": "min_ade", "fde": "min_fde", "nll": "kde_nll", "kde_nll": "kde_nll", "ecfl": "ecfl",
                  "min_ade": "min_ade", "min_fde": "min_fde"}


def canonical_metric(name: str) -> str:
    try:
        return METRIC_ALIASES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown metric {name!r}; choose from {sorted(METRIC_ALIASES)}") from None


@dataclass
class SignificanceReport:
    methods: list[str]
    settings: list[str]
    avg_ranks: np.ndarray | None = None
    chi2: float | None = None
    f_f: float | None = None
    cd: float | None = None
    different: list = field(default_factory=list)
    pairwise: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def markdown(self) -> str:
        lines = ["# Significance report", ""]
        if self.avg_ranks is not None:
            lines += [f"Settings (dataset, K, metric): {len(self.settings)}", "",
                      "| method | average rank |", "|---|---|"]
            lines += [f"| {m} | {r:.3f} |" for m, r in zip(self.methods, self.avg_ranks)]
            lines += ["", f"chi2_F = {self.chi2:.3f}, F_F = {self.f_f:.3f}, Nemenyi CD = {self.cd:.3f}", ""]
            if self.different:
                lines += [f"- {a} vs {b}: rank gap {g:.3f} > CD" for a, b, g in self.different]
            else:
                lines.append("No pair differs by more than the critical difference.")
            lines.append("")
        if self.pairwise:
            lines += ["| metric | A | B | ROPE | P(A better) | P(equivalent) | P(B better) |",
                      "|---|---|---|---|---|---|---|"]
            lines += [f"| {p['metric']} | {p['a']} | {p['b']} | {p['rope']:g} | {p['p_a']:.4f} | "
                      f"{p['p_rope']:.4f} | {p['p_b']:.4f} |" for p in self.pairwise]
        lines += [f"> {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "significance.md").write_text(self.markdown())
        with open(out / "significance.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "method_a", "method_b", "rope", "p_a", "p_rope", "p_b"])
            for p in self.pairwise:
                w.writerow([p["metric"], p["a"], p["b"], p["rope"], f"{p['p_a']:.6f}", f"{p['p_rope']:.6f}",
                            f"{p['p_b']:.6f}"])


def _load(inputs, names):
    names = list(names) if names else [Path(p).stem for p in inputs]
    if len(names) != len(inputs) or len(set(names)) != len(names):
        raise ConfigError("need one unique name per input CSV")
    tables = {}
    for name, path in zip(names, inputs):
        try:
            rows = read_metric_csv(path)
        except (KeyError, ValueError) as exc:
            raise ParseError(f"{path}: not a metric CSV ({exc})") from exc
        tables[name] = {(r["scene_id"], r["k"]): r for r in rows}
    return names, tables


def build_report(inputs, names=None, metric: str = "ade", rope="auto", units: str = "meters",
                 mc_samples: int = 50_000, seed: int = 0) -> SignificanceReport:
    """Friedman/Nemenyi over (K, metric) settings and pairwise Bayesian tests on ``metric``."""
    names, tables = _load(inputs, names)
    if len(names) < 2:
        raise InsufficientDataError("need at least two methods to compare")
    common = sorted(set.intersection(*(set(t) for t in tables.values())))
    if not common:
        raise InsufficientDataError("input CSVs share no (scene_id, k) rows")
    ks = sorted({k for _, k in common})
    report = SignificanceReport(names, [f"K={k}/{m}" for k in ks for m in METRICS])

    scores, hib = [], []
    for k in ks:
        keys = [key for key in common if key[1] == k]
        for m in METRICS:
            scores.append([np.nanmean([tables[n][key][m] for key in keys]) for n in names])
            hib.append(HIGHER_IS_BETTER[m])
    try:
        rt = RankTable.from_scores(names, report.settings, scores, np.array(hib))
        report.chi2, report.f_f, _ = friedman(rt)
        report.avg_ranks = average_ranks(rt)
        report.cd = nemenyi_cd(len(names), len(report.settings))
        report.different = significant_pairs(names, report.avg_ranks, report.cd)
    except (InsufficientDataError, DegenerateStatisticError, ConfigError) as exc:
        report.avg_ranks = None
        report.notes.append(f"rank analysis skipped: {exc}")

    metrics = list(METRICS) if metric == "all" else [canonical_metric(metric)]
    rng = np.random.default_rng(seed)
    for m in metrics:
        r = rope_for(m, units) if rope == "auto" else float(rope)
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                a = [tables[names[i]][key][m] for key in common]
                b = [tables[names[j]][key][m] for key in common]
                ok = ~(np.isnan(a) | np.isnan(b))
                diffs = oriented_diffs(m, np.asarray(a)[ok], np.asarray(b)[ok])
                p_a, p_rope, p_b = bayesian_signed_rank(PairedScores(names[i], names[j], diffs, r),
                                                        mc_samples=mc_samples, rng=rng)
                report.pairwise.append({"metric": m, "a": names[i], "b": names[j], "rope": r,
                                        "p_a": p_a, "p_rope": p_rope, "p_b": p_b})
    return report
