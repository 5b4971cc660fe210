"""Command-line front end.

Exit status: 0 on success, 1 for an invalid spec or failed validation, 2 when
the time step violates the CFL bound or an enumeration budget is exceeded.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .chain import CFLError, build_chain, moment_audit
from .config import load_spec
from .dual import BudgetExceeded, dual_minimize, dual_values
from .model import SpecError, two_state_example, validate_spec
from .simplex import SimplexGrid
from .sim import run_episodes
from .solver import dp_backward, tabulate, viscosity_residual_check
from .strategy import best_response_value, build_strategy, save_strategy

MODES = ("solve", "dual", "strategy", "simulate", "example23", "validate")


@dataclass
class RunConfig:
    mode: str
    spec: str = "paper_2_3"
    dx: float = 0.1
    dt: float = 0.01
    pmesh: int | None = None
    tol: float = 1e-8
    seed: int = 0
    out: str = "out"
    workers: int = 1
    keep_field: bool = False
    episode_log: bool = False
    x0: str | None = None
    p: str | None = None
    episodes: int = 100_000
    budget: int = 10**6
    fixed_trees: bool = False


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infodynkin", description="Dynkin games with one-sided incomplete information.")
    ap.add_argument("--mode", choices=MODES, required=True)
    ap.add_argument("--spec", default="paper_2_3", help="spec file, or a bundled name: paper_2_3, noisy_2_3, three_scenarios")
    ap.add_argument("--dx", type=float, default=0.1, help="spatial spacing")
    ap.add_argument("--dt", type=float, default=0.01, help="time step")
    ap.add_argument("--pmesh", type=int, default=None, help="simplex mesh N (default 64 for I=2, 16 otherwise)")
    ap.add_argument("--tol", type=float, default=1e-8, help="residual-check tolerance")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--keep-field", action="store_true", help="write every time slice of the value field")
    ap.add_argument("--episode-log", action="store_true", help="write one CSV row per simulated episode")
    ap.add_argument("--x0", default=None, help="start point, comma separated (default: box centre)")
    ap.add_argument("--p", default=None, help="root belief, comma separated (default: grid node nearest the barycentre)")
    ap.add_argument("--episodes", type=int, default=100_000)
    ap.add_argument("--budget", type=int, default=10**6, help="tree budget for --fixed-trees")
    ap.add_argument("--fixed-trees", action="store_true", help="dual mode: search splits that ignore the spatial node")
    return ap


def _floats(text):
    return None if text is None else [float(v) for v in text.split(",")]


def _root(pgrid: SimplexGrid, text) -> int:
    if text is None:
        target = np.full(pgrid.n_scenarios, 1.0 / pgrid.n_scenarios)
        return int(np.argmin(((pgrid.nodes - target) ** 2).sum(axis=1)))
    return pgrid.node_of(_floats(text))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write_metadata(out: Path, cfg: RunConfig, extra: dict) -> None:
    cp = configparser.ConfigParser()
    cp["run"] = {k: str(v) for k, v in vars(cfg).items()}
    cp["run"]["timestamp"] = datetime.now(timezone.utc).isoformat()
    cp["results"] = {k: str(v) for k, v in extra.items()}
    with open(out / "metadata.cfg", "w") as fh:
        cp.write(fh)


def _setup(cfg: RunConfig):
    spec = two_state_example() if cfg.mode == "example23" else load_spec(cfg.spec)
    chain = build_chain(spec, cfg.dx, cfg.dt)
    mesh = cfg.pmesh or (64 if spec.n_scenarios <= 2 else 16)
    return spec, chain, SimplexGrid(spec.n_scenarios, mesh)


def _slice_rows(field_, k):
    sl = field_.slice(k)
    for s, x in enumerate(field_.chain.x_nodes):
        for n, p in enumerate(field_.pgrid.nodes):
            yield [float(field_.chain.t_nodes[k]), *map(float, x), *map(float, p), float(sl[s, n])]


def _field_header(field_):
    d = field_.chain.x_nodes.shape[1]
    return ["t"] + [f"x_{j + 1}" for j in range(d)] + [f"p_{i + 1}" for i in range(field_.pgrid.n_scenarios)] + ["value"]


def _solve(cfg, out, say):
    spec, chain, pgrid = _setup(cfg)
    field_ = dp_backward(spec, chain, pgrid, keep_full=True, workers=cfg.workers)
    if cfg.keep_field:
        (out / "value_field.csv").write_text(field_.to_csv())
    else:
        (out / "value_field.csv").write_text(_csv(_field_header(field_), _slice_rows(field_, 0)))
    rep = viscosity_residual_check(field_, cfg.tol)
    audit = moment_audit(chain)
    lines = rep.lines() + [f"moment audit: mean {audit.mean_error:.3e} var {audit.var_error:.3e} bound {audit.bound:.3e} "
                           + ("pass" if audit.ok else "FAIL")]
    (out / "residual_report.txt").write_text("\n".join(lines) + "\n")
    for ln in lines:
        say(ln)
    return {"residual_ok": rep.ok, "audit_ok": audit.ok}


def _dual(cfg, out, say):
    spec, chain, pgrid = _setup(cfg)
    tables = tabulate(spec, chain)
    field_ = dp_backward(spec, chain, pgrid, workers=cfg.workers)
    x0 = _floats(cfg.x0)
    s0 = chain.space_index(x0) if x0 is not None else None
    r = _root(pgrid, cfg.p)
    if cfg.fixed_trees:
        value, tree = dual_minimize(spec, chain, pgrid, r, x0=x0, adapted=False, budget=cfg.budget, tables=tables)
    else:
        value, tree = dual_minimize(spec, chain, pgrid, r, x0=x0, tables=tables)
    W, _ = dual_values(tables, chain, pgrid)
    gap_all = float(np.abs(W[0] - field_.slice(0)).max())
    s = s0 if s0 is not None else _centre(chain)
    primal = float(field_.slice(0)[s, r])
    rows = [[float(q) for q in p] + [float(W[0][s, n]), float(field_.slice(0)[s, n])] for n, p in enumerate(pgrid.nodes)]
    (out / "dual_values.csv").write_text(_csv([f"p_{i + 1}" for i in range(pgrid.n_scenarios)] + ["dual", "primal"], rows))
    (out / "tree.txt").write_text(tree.to_text())
    say(f"dual value {value!r} primal value {primal!r}")
    say(f"gap |primal - dual| at root: {abs(primal - value):.3e}; max over all start states: {gap_all:.3e}")
    return {"dual": value, "primal": primal, "gap": abs(primal - value), "gap_all": gap_all}


def _centre(chain):
    return chain.space_index([(a[0] + a[-1]) / 2 for a in chain.x_axes])


def _strategy(cfg, out, say, simulate=False):
    spec, chain, pgrid = _setup(cfg)
    field_ = dp_backward(spec, chain, pgrid, keep_full=True, workers=cfg.workers)
    r = _root(pgrid, cfg.p)
    strat = build_strategy(field_, r, x0=_floats(cfg.x0))
    br, rule = best_response_value(None, chain, strat, return_rule=True)
    info = {"value": strat.value, "best_response": br, "excess": br - strat.value}
    if not simulate:
        save_strategy(strat, out / "strategy")
        lines = [f"value V(0, x0, p) = {strat.value!r}", f"best response = {br!r}",
                 f"guarantee best_response <= V + 1e-9: {'pass' if br <= strat.value + 1e-9 else 'FAIL'}"]
        (out / "guarantee_report.txt").write_text("\n".join(lines) + "\n")
        for ln in lines:
            say(ln)
        return info
    res = run_episodes(None, chain, strat, rule, cfg.episodes, cfg.seed, workers=cfg.workers, log=cfg.episode_log)
    rows = [[f"scenario_{i + 1}", m, "", "", c] for i, (m, c) in sorted(res.per_scenario.items())]
    rows.append(["weighted", res.total, res.ci[0], res.ci[1], res.n])
    rows.append(["dp_best_response", br, br, br, 0])
    (out / "estimates.csv").write_text(_csv(["quantity", "estimate", "ci_low", "ci_high", "episodes"], rows))
    if cfg.episode_log:
        (out / "episodes.csv").write_text(res.log_csv())
    say(f"simulated {res.total!r} (95% CI {res.ci[0]!r}, {res.ci[1]!r}); exact best response {br!r}")
    info.update(estimate=res.total, ci_low=res.ci[0], ci_high=res.ci[1])
    return info


def _example23(cfg, out, say):
    spec, chain, pgrid = _setup(cfg)
    field_ = dp_backward(spec, chain, pgrid)
    V = field_.slice(0)[0]
    p = pgrid.nodes[:, 0]
    tol = 1e-9
    rows, ok = [], True
    for n in range(len(pgrid)):
        rev = 2 - p[n]
        non = 2 - 3 * p[n]
        c1 = V[n] <= rev + tol
        c2 = V[n] <= non + tol if p[n] < 1 / 7 else True
        ok &= bool(c1 and c2)
        rows.append([float(p[n]), float(V[n]), float(rev), float(non), int(c1), int(c2)])
    (out / "example23.csv").write_text(_csv(["p", "value", "reveal_bound", "nonreveal_payoff", "below_reveal", "below_nonreveal"], rows))
    v1, v2 = float(V[pgrid.vertices[0]]), float(V[pgrid.vertices[1]])
    lo = float(max(q for q in p if q < 1 / 7))
    hi = float(min(q for q in p if q > 1 / 7))
    checks = [
        (f"V(0, e1) = {v1!r} (expected 1)", abs(v1 - 1) <= tol),
        (f"V(0, e2) = {v2!r} (expected 2)", abs(v2 - 2) <= tol),
        ("V(0, p) <= 2 - p at every grid p", all(r[4] for r in rows)),
        ("V(0, p) <= 2 - 3p at every grid p < 1/7", all(r[5] for r in rows)),
        (f"non-revealing threshold 1/7 lies between grid nodes {lo!r} and {hi!r}",
         2 - 3 * lo > 1.5 + lo / 2 and 2 - 3 * hi < 1.5 + hi / 2),
    ]
    for text, good in checks:
        say(("pass  " if good else "FAIL  ") + text)
    return {"all_pass": ok and all(g for _, g in checks)}


def _validate(cfg, out, say):
    spec = load_spec(cfg.spec)
    rep = validate_spec(spec)
    (out / "validation_report.txt").write_text(rep.summary() + "\n")
    say(rep.summary())
    return {"violations": len(rep.violations)}


def run(cfg: RunConfig, say=print) -> int:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.mode == "solve":
            info = _solve(cfg, out, say)
            status = 0
        elif cfg.mode == "dual":
            info = _dual(cfg, out, say)
            status = 0
        elif cfg.mode == "strategy":
            info = _strategy(cfg, out, say)
            status = 0
        elif cfg.mode == "simulate":
            info = _strategy(cfg, out, say, simulate=True)
            status = 0
        elif cfg.mode == "example23":
            info = _example23(cfg, out, say)
            status = 0 if info["all_pass"] else 1
        elif cfg.mode == "validate":
            info = _validate(cfg, out, say)
            status = 1 if info["violations"] else 0
        else:
            raise ValueError(f"unknown mode {cfg.mode!r}")
    except CFLError as exc:
        say(f"error: {exc}")
        return 2
    except BudgetExceeded as exc:
        say(f"error: {exc}")
        return 2
    except (SpecError, FileNotFoundError, ValueError) as exc:
        say(f"error: {exc}")
        return 1
    _write_metadata(out, cfg, info)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**{k: v for k, v in vars(args).items()})
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
