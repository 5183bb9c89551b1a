"""Human-readable and JSON summaries of experiment records."""

from __future__ import annotations

from .records import ExperimentRecord, clean

SWEEP_KIND = "cv-vs-rho-sweep"


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def report(records: list[ExperimentRecord]) -> tuple[str, dict]:
    """(text, data) summarizing records; the sweep table lists C(v) against v - rho."""
    data = {"n_records": len(records), "n_passed": sum(r.passed for r in records),
            "n_failed": sum(not r.passed for r in records), "records": [], "sweep": []}
    lines = [f"fragrate report: {data['n_records']} record(s), {data['n_passed']} passed, "
             f"{data['n_failed']} failed"]
    for r in records:
        data["records"].append({"kind": r.kind, "config_hash": r.config_hash, "seed": r.seed, "passed": r.passed,
                                "partial": r.partial, "fits": r.fits, "reference": r.reference,
                                "checks": [c.__dict__ for c in r.checks], "notes": r.notes,
                                "wall_clock": r.wall_clock})
        lines.append("")
        lines.append(f"[{'PASS' if r.passed else 'FAIL'}] {r.kind}  seed={r.seed}  config={r.config_hash[:12]}"
                     f"{'  (partial)' if r.partial else ''}")
        for c in r.checks:
            lines.append(f"    {'ok  ' if c.passed else 'FAIL'} {c.name}: value={_fmt(c.value)} "
                         f"reference={_fmt(c.reference)} tol[{c.tolerance_key or '-'}]={_fmt(c.tolerance)}"
                         f"{'  ' + c.detail if c.detail else ''}")
        for note in r.notes:
            lines.append(f"    note: {note}")
        if r.kind == SWEEP_KIND:
            data["sweep"].extend(r.points)
    if data["sweep"]:
        lines += ["", "C(v) against v - rho(v; a, b)",
                  f"{'v':>8} {'a':>6} {'b':>6} {'C(v)':>12} {'rho':>12} {'v - rho':>12} {'gap':>12}"]
        for row in data["sweep"]:
            lines.append(f"{row['v']:8.4g} {row['a']:6.3g} {row['b']:6.3g} {row['C']:12.6g} {row['rho']:12.6g} "
                         f"{row['v_minus_rho']:12.6g} {row['gap']:12.6g}")
    return "\n".join(lines) + "\n", clean(data)


def exit_status(records) -> int:
    return 0 if all(r.passed for r in records) else 1
