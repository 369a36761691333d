"""Command-line front door: verify identities, dump samples, run experiments, regenerate goldens."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .decorations import X_CRITICAL
from .oracle import BETA_CRITICAL, EVEN, ODD, ZERO

OUT_ENV = "DOUBLECURRENT_OUT"
DEFAULT_OUT = "out"
EXACT_EDGE_LIMIT = 200           # largest graph sampled through the dimer model under --sampler auto
CLUSTER_BRACKET = (0.03, 0.15)   # sanity bracket for the ratio at the smallest eps


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    domain: str | None = None
    x: float = X_CRITICAL
    bc: str = "free"
    n: int | None = None
    seed: int | None = None
    out: str = DEFAULT_OUT
    workers: int = 1

    @property
    def beta(self) -> float:
        return math.atanh(self.x)


def parse_domain(spec: str):
    """square:N (unit square, mesh 1/N), disk:N (unit disk, mesh 1/N) or grid:AxB (vertex grid)."""
    from .planar_map import build_square_domain, grid_domain
    try:
        kind, arg = spec.split(":", 1)
        if kind == "square":
            return build_square_domain("rectangle", (1.0, 1.0), 1.0 / int(arg))
        if kind == "disk":
            return build_square_domain("disk", 1.0, 1.0 / int(arg))
        if kind == "grid":
            a, b = arg.lower().split("x")
            return grid_domain(int(a), int(b))
    except ValueError as exc:
        raise UsageError(f"bad domain {spec!r}: {exc}") from None
    raise UsageError(f"bad domain {spec!r}; expected square:N, disk:N or grid:AxB")


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def parse_points(text: str) -> list:
    pts = [tuple(_floats(p)) for p in text.split(":")]
    if any(len(p) != 2 for p in pts):
        raise UsageError(f"bad point list {text!r}; expected x,y:x,y")
    return pts


# ---------------------------------------------------------------------------
# atomic, deterministic output

def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _provenance(cfg: RunConfig) -> dict:
    # the output directory is not part of the result
    return {k: v for k, v in asdict(cfg).items() if k != "out"}


def _header(cfg: RunConfig, extra: dict | None = None) -> str:
    return "# config: " + json.dumps({**_provenance(cfg), **(extra or {})}, sort_keys=True) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path: str, cfg: RunConfig, rows: list, fields: list | None = None, extra: dict | None = None):
    buf = io.StringIO()
    buf.write(_header(cfg, extra))
    fields = fields or (list(rows[0]) if rows else [])
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in fields})
    _atomic_write(path, buf.getvalue())


def write_json(path: str, cfg: RunConfig | None, payload: dict):
    body = {"config": _provenance(cfg)} if cfg else {}
    body.update(payload)
    _atomic_write(path, json.dumps(body, indent=1, sort_keys=True, default=_fmt) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_verify(cfg: RunConfig, corrupt: bool = False) -> int:
    from .checks import run_identity_suite
    checks = run_identity_suite(cfg.x, corrupt=corrupt)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} [{c.graph}] residual={c.value:.3e} tol={c.tol:.0e}")
    write_json(os.path.join(cfg.out, "verify.json"), cfg,
               {"checks": [c.to_dict() for c in checks], "passed": not failed})
    print(f"{len(checks) - len(failed)}/{len(checks)} identities hold")
    return 1 if failed else 0


def _sample_traces(domain, cfg: RunConfig, sampler: str, sweeps: int) -> list:
    """(map of the run, ghost or None, list of primal class arrays)."""
    from .currents import ClusterChain, CoupledSampler, _resolve
    from .loops_stats import _chunks, _streams
    m, ghost = _resolve(domain, cfg.bc)
    use_exact = sampler == "exact" or (sampler == "auto" and m.n_edges <= EXACT_EDGE_LIMIT)
    out = []
    if use_exact:
        rng = np.random.default_rng(cfg.seed)
        _, p, _ = CoupledSampler(m, cfg.x).traces(cfg.n, rng)
        return m, ghost, list(p), "exact"
    for ss, n in zip(_streams(cfg.seed, cfg.workers), _chunks(cfg.n, cfg.workers)):
        if n == 0:
            continue
        chain = ClusterChain(m, cfg.x, seed=int(ss.generate_state(1)[0]), sweeps=sweeps)
        chain.burn_in(200)
        for _ in range(n):
            odd, op, _ = chain.step()
            out.append(np.where(odd, ODD, np.where(op, EVEN, ZERO)).astype(np.int8))
    return m, ghost, out, "chain"


def cmd_sample(cfg: RunConfig, domain, render: bool = False, sampler: str = "auto", sweeps: int = 10) -> int:
    from . import _kernels
    from .currents import CurrentTrace, check_trace
    from .fields import nesting_on_faces
    from .loops_stats import loop_family
    m, ghost, traces, used = _sample_traces(domain, cfg, sampler, sweeps)
    E = domain.map.n_edges
    faces = [f for f in m.bounded_faces if ghost is None or ghost not in set(m.face_vertices(f).tolist())]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(cfg.workers + 1)[-1])
    summary = []
    extra = {"sampler": used}
    for k, primal in enumerate(traces):
        check_trace(m, primal)
        lab = _kernels.components(m.n_vertices, m.edges.astype(np.int64), primal != ZERO)
        labels = rng.choice(np.array([-1, 1]), size=int(lab.max()) + 1)
        h = nesting_on_faces(m, primal == ODD, lab, labels, faces, ghost)
        write_csv(os.path.join(cfg.out, f"trace_{k:04d}.csv"), cfg,
                  [{"edge": e, "u": int(m.edges[e, 0]), "v": int(m.edges[e, 1]), "class": int(primal[e]),
                    "cluster": int(lab[m.edges[e, 0]])} for e in range(E)], extra={**extra, "sample": k})
        centers = m.face_centers
        write_csv(os.path.join(cfg.out, f"height_{k:04d}.csv"), cfg,
                  [{"face": int(f), "x": float(centers[f, 0]), "y": float(centers[f, 1]), "h": float(v)}
                   for f, v in zip(faces, h)], extra={**extra, "sample": k})
        row = {"sample": k, "odd_edges": int(np.sum(primal[:E] == ODD)),
               "open_edges": int(np.sum(primal[:E] != ZERO)), "clusters": int(lab.max()) + 1}
        family = None
        if ghost is None:
            tr = CurrentTrace(m, primal, np.zeros_like(primal), labels=labels)
            family = loop_family(tr)
            rows = []
            for i, (P, meta) in enumerate(zip(family.loops, family.meta)):
                for j, (px, py) in enumerate(P):
                    rows.append({"loop": i, "cluster": meta.cluster, "outer": int(meta.outer), "odd": int(meta.odd),
                                 "label": meta.label, "point": j, "x": float(px), "y": float(py)})
            write_csv(os.path.join(cfg.out, f"loops_{k:04d}.csv"), cfg, rows,
                      ["loop", "cluster", "outer", "odd", "label", "point", "x", "y"], {**extra, "sample": k})
            row["loops"] = len(family)
            row["odd_holes"] = sum(1 for mt in family.meta if not mt.outer and mt.odd)
        if render:
            from .loops_stats import LoopFamily
            from .render import render_sample
            fam = family or LoopFamily([], [])
            render_sample(domain.map, primal[:E], fam, os.path.join(cfg.out, f"sample_{k:04d}.svg"),
                          f"{cfg.domain} {cfg.bc} sample {k}")
        summary.append(row)
    fields = ["sample", "odd_edges", "open_edges", "clusters", "loops", "odd_holes"]
    write_csv(os.path.join(cfg.out, "summary.csv"), cfg, summary, fields, extra)
    print(f"wrote {len(traces)} samples to {cfg.out} ({used} sampler)")
    return 0


def cmd_moments(cfg: RunConfig, domain, points: list, render: bool = False) -> int:
    from .loops_stats import estimate_height_moments
    rep = estimate_height_moments(domain, points, cfg.n, cfg.x, cfg.seed, cfg.workers)
    rows = rep.table()
    extra = {"points": [list(map(float, p)) for p in points], "mesh": rep.mesh,
             "relevant_clusters": rep.relevant_clusters, "convention": rep.variance_convention}
    write_csv(os.path.join(cfg.out, "moments.csv"), cfg, rows,
              ["points", "order", "estimate", "stderr", "target", "target_at_faces", "z", "label_averaged"], extra)
    if render:
        from .render import render_moments
        render_moments(rep, os.path.join(cfg.out, "moments.svg"))
    bad = [r for r in rows if r["z"] is not None and abs(r["z"]) > 3]
    for r in rows:
        z = "" if r["z"] is None else f" z={r['z']:+.2f}"
        print(f"{r['points']:>10} estimate={r['estimate']:.6f} se={r['stderr']:.6f}{z}")
    return 1 if bad else 0


def cmd_exitmean(cfg: RunConfig, paths: int, render: bool = False) -> int:
    from .loops_stats import brownian_exit_mean
    rep = brownian_exit_mean(paths, np.random.default_rng(cfg.seed))
    row = {"estimate": rep.estimate, "stderr": rep.se, "target": rep.target,
           "z": (rep.estimate - rep.target) / rep.se, "relative_error": rep.relative_error,
           "first_mean": rep.first, "second_mean": rep.second, "paths": rep.n_paths}
    write_csv(os.path.join(cfg.out, "exitmean.csv"), cfg, [row])
    if render:
        from .render import render_exit_times
        render_exit_times(rep, os.path.join(cfg.out, "exitmean.svg"))
    print(f"E[T1+T2] = {rep.estimate:.5f} +- {rep.se:.5f} (target {rep.target:.5f}, rel err {rep.relative_error:.2e})")
    return 0 if rep.relative_error <= 0.005 else 1


def cmd_clusters(cfg: RunConfig, domain, eps: list, render: bool = False) -> int:
    from .loops_stats import cluster_count_experiment
    tab = cluster_count_experiment(domain, eps, cfg.n, cfg.x, cfg.seed, cfg.workers)
    rows = tab.table()
    write_csv(os.path.join(cfg.out, "clusters.csv"), cfg, rows, extra={"bracket": list(CLUSTER_BRACKET)})
    if render:
        from .render import render_cluster_counts
        render_cluster_counts(tab, os.path.join(cfg.out, "clusters.svg"))
    for r in rows:
        print(f"eps={r['eps']:.3f} N={r['mean_count']:.3f} ratio={r['ratio']:.4f} +- {r['ratio_stderr']:.4f}")
    lo, hi = CLUSTER_BRACKET
    first = rows[int(np.argmin(tab.eps))]["ratio"]
    return 0 if lo <= first <= hi else 1


def cmd_crossings(cfg: RunConfig, domain, r: int, radii: list, render: bool = False) -> int:
    from .loops_stats import Annulus, CrossingCounter, _chunks, _streams
    from .currents import ClusterChain
    m = domain.map
    try:
        counters = [CrossingCounter(m, Annulus(domain.center, r, int(R))) for R in radii]
    except ValueError as exc:
        raise UsageError(f"{exc} (r={r}, radii={radii}, domain {cfg.domain})") from None
    res = np.zeros((cfg.n, len(radii), 3))
    s = 0
    for ss, n in zip(_streams(cfg.seed, cfg.workers), _chunks(cfg.n, cfg.workers)):
        chain = ClusterChain(m, cfg.x, seed=int(ss.generate_state(1)[0]))
        chain.burn_in(200)
        for _ in range(n):
            odd, op, _ = chain.step()
            for j, c in enumerate(counters):
                cc = c(odd, op)
                res[s, j] = (cc.k_clusters, cc.four_arm_square, cc.four_arm_hole)
            s += 1
    rows = []
    for j, R in enumerate(radii):
        v = res[:, j]
        rows.append({"r": r, "R": int(R), "mean_k": v[:, 0].mean(), "p_four_arm_square": v[:, 1].mean(),
                     "se_square": v[:, 1].std(ddof=1) / math.sqrt(cfg.n) if cfg.n > 1 else None,
                     "p_four_arm_hole": v[:, 2].mean(),
                     "se_hole": v[:, 2].std(ddof=1) / math.sqrt(cfg.n) if cfg.n > 1 else None,
                     **{f"k{k}": float(np.mean(v[:, 0] == k)) for k in range(4)}})
    write_csv(os.path.join(cfg.out, "crossings.csv"), cfg, rows)
    if render:
        from .render import render_crossings
        render_crossings([int(R) for R in radii], {"square": [q["p_four_arm_square"] for q in rows],
                                                   "hole": [q["p_four_arm_hole"] for q in rows]},
                         os.path.join(cfg.out, "crossings.svg"))
    for q in rows:
        print(f"R={q['R']} P[square]={q['p_four_arm_square']:.4f} P[hole]={q['p_four_arm_hole']:.4f}")
    return 0


def golden_payload(x: float = X_CRITICAL) -> dict:
    """Exact laws per corpus graph, keyed by graph name."""
    from .checks import corpus
    from .decorations import build_cg
    from .fields import exact_nesting_law
    from .oracle import closed_form_trace_law, dimer_partition
    beta = math.atanh(x)
    out = {}
    for name, m in corpus().items():
        law = closed_form_trace_law(m, beta)
        nest = exact_nesting_law(m, beta)
        out[name] = {
            "n_vertices": m.n_vertices, "n_edges": m.n_edges,
            "city_partition_function": dimer_partition(build_cg(m, x)),
            "trace_law": {",".join(map(str, k)): v for k, v in sorted(law.items())},
            "nesting_law": {",".join(f"{t:g}" for t in k): v for k, v in sorted(nest.items())},
        }
    return out


def cmd_golden(cfg: RunConfig) -> int:
    payload = golden_payload(cfg.x)
    for name, body in payload.items():
        write_json(os.path.join(cfg.out, f"{name}.json"), None, {"graph": name, "x": cfg.x, **body})
    print(f"wrote {len(payload)} golden files to {cfg.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, seed_required: bool):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--x", type=float, help="edge weight tanh(beta); default critical")
    g.add_argument("--beta", type=float, help="inverse temperature; default critical")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--render", action="store_true", help="write SVG figures next to the tables")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="doublecurrent", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="run the exact-identity suite on the frozen corpus")
    _common(v, False)
    v.add_argument("--inject-fault", action="store_true", help="flip one street phase (the suite must fail)")
    s = sub.add_parser("sample", help="dump traces, nesting fields and loops")
    _common(s, True)
    s.add_argument("--domain", required=True)
    s.add_argument("--bc", choices=("free", "wired"), default="free")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--sampler", choices=("auto", "exact", "chain"), default="auto")
    s.add_argument("--sweeps", type=int, default=10, help="chain sweeps between dumped samples")
    st = sub.add_parser("stats", help="Monte Carlo experiments")
    ss = st.add_subparsers(dest="experiment", required=True)
    mo = ss.add_parser("moments", help="mixed moments of the nesting field vs pairing targets")
    _common(mo, True)
    mo.add_argument("--domain", default="square:48")
    mo.add_argument("--points", default="0.3,0.5:0.7,0.5")
    mo.add_argument("--n", type=int, default=200_000)
    ex = ss.add_parser("exitmean", help="mean of the two Brownian exit times")
    _common(ex, True)
    ex.add_argument("--paths", type=int, default=1_000_000)
    cl = ss.add_parser("clusters", help="clusters surrounding the centre by conformal radius")
    _common(cl, True)
    cl.add_argument("--domain", default="disk:128")
    cl.add_argument("--eps", default="0.05,0.1,0.2")
    cl.add_argument("--n", type=int, default=200)
    cr = ss.add_parser("crossings", help="annulus crossing events at the domain centre")
    _common(cr, True)
    cr.add_argument("--domain", default="square:64")
    cr.add_argument("--r", type=int, default=2)
    cr.add_argument("--radii", default="4,8,16")
    cr.add_argument("--n", type=int, default=10_000)
    gd = sub.add_parser("golden", help="regenerate golden JSON laws for the corpus")
    _common(gd, False)
    return ap


def _config(args) -> RunConfig:
    if getattr(args, "beta", None) is not None:
        if args.beta <= 0:
            raise UsageError("beta must be positive")
        x = math.tanh(args.beta)
    elif getattr(args, "x", None) is not None:
        if not 0 < args.x < 1:
            raise UsageError("x must lie in (0, 1)")
        x = args.x
    else:
        x = math.tanh(BETA_CRITICAL)
    if args.workers < 1:
        raise UsageError("workers must be positive")
    n = getattr(args, "n", None)
    if n is not None and n < 1:
        raise UsageError("--n must be positive")
    out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    cmd = args.command + (f" {args.experiment}" if args.command == "stats" else "")
    return RunConfig(cmd, getattr(args, "domain", None), x, getattr(args, "bc", "free"), n,
                     args.seed, out, args.workers)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config(args)
        if args.command == "verify":
            return cmd_verify(cfg, args.inject_fault)
        if args.command == "golden":
            return cmd_golden(cfg)
        if args.command == "sample":
            return cmd_sample(cfg, parse_domain(args.domain), args.render, args.sampler, args.sweeps)
        if args.experiment == "exitmean":
            if args.paths < 1:
                raise UsageError("--paths must be positive")
            return cmd_exitmean(cfg, args.paths, args.render)
        domain = parse_domain(args.domain)
        if args.experiment == "moments":
            return cmd_moments(cfg, domain, parse_points(args.points), args.render)
        if args.experiment == "clusters":
            return cmd_clusters(cfg, domain, _floats(args.eps), args.render)
        return cmd_crossings(cfg, domain, args.r, [int(v) for v in _floats(args.radii)], args.render)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
