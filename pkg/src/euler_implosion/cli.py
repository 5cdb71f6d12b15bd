"""Command line entry point: ``euler-implosion <command> ...``.

Exit codes: 0 success, 1 domain error, 2 verification failure, 64 usage error.
Every data file gets a JSON sidecar holding the run configuration, the
package version and the reported constants.  Data files carry no
timestamps, so identical configurations give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import mpmath as mp
import numpy as np

from . import __version__
from .errors import ProfileError, VerificationError
from .params import (DEFAULT_PREC, ParamSet, params_from_a, params_from_alpha, params_from_lambda, params_from_r,
                     params_from_R, params_from_w_minus, special_points)

EX_USAGE = 64
PREC_ENV = "EULER_IMPLOSION_PREC"
THREADS_ENV = "EULER_IMPLOSION_THREADS"

PROFILE_COLUMNS = ("x", "sigma", "w", "sigma_prime", "w_prime", "Z", "U_E", "S_E", "margin_ii", "margin_iii")
GAP_COLUMNS = ("R", "gap", "err", "u_L", "u_F", "a_next", "prec", "K")
SERIES_COLUMNS = ("n", "a_n", "abs_err")
SINF_COLUMNS = ("n", "ratio")


@dataclass
class RunConfig:
    command: str
    entry: Optional[tuple] = None
    N: Optional[list] = None
    K: Optional[int] = None
    K_rat: int = 64
    precision_bits: int = DEFAULT_PREC
    rtol: float = 1e-12
    bisect_tol: float = 1e-10
    probe_margin: float = 1e-3
    cert_samples: int = 4096
    n_side: int = 4096
    sigma_max: float = 1e4
    sigma_floor: float = 1e-6
    out: str = "out"
    checkpoint: Optional[str] = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self):
        for name in ("rtol", "bisect_tol", "probe_margin", "sigma_floor"):
            if not getattr(self, name) > 0:
                raise ProfileError("OUT_OF_RANGE", f"{name} must be positive")
        if self.precision_bits < 64:
            raise ProfileError("OUT_OF_RANGE", "precision_bits must be >= 64")
        if self.threads < 1:
            raise ProfileError("OUT_OF_RANGE", "threads must be >= 1")


def version_string():
    """git describe when run from a checkout, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def fmt(v, prec=None):
    """Round-trip exact text for floats (repr) and mpf (enough digits for the working precision)."""
    if isinstance(v, mp.mpf):
        return mp.nstr(v, int((prec or mp.mp.prec) * 0.30103) + 3, min_fixed=-4, max_fixed=17)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _jsonable(v, prec=None):
    if hasattr(v, "_asdict"):
        v = v._asdict()
    if isinstance(v, dict):
        return {str(k): _jsonable(x, prec) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x, prec) for x in v]
    if isinstance(v, mp.mpf):
        return fmt(v, prec)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x, prec) for x in v.tolist()]
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    return str(v)


def write_csv(path: Path, columns, rows, prec=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(columns)
            for row in rows:
                wr.writerow([fmt(v, prec) for v in row])
    except OSError as e:
        raise ProfileError("IO_ERROR", f"{path}: {e}")


def write_json(path: Path, cfg: RunConfig, constants: dict, prec=None):
    doc = {"version": version_string(), "config": _jsonable(asdict(cfg)), "precision_bits": prec or cfg.precision_bits,
           "constants": _jsonable(constants, prec)}
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    except OSError as e:
        raise ProfileError("IO_ERROR", f"{path}: {e}")


def serialize(stem: Path, cfg: RunConfig, columns, rows, constants, prec=None):
    write_csv(stem.with_suffix(".csv"), columns, rows, prec)
    write_json(stem.with_suffix(".json"), cfg, constants, prec)


# ---------------------------------------------------------------- commands

ENTRY = {"R": params_from_R, "r": params_from_r, "a": params_from_a, "alpha": params_from_alpha,
         "lambda": params_from_lambda, "w_minus": params_from_w_minus}


def _params(cfg: RunConfig) -> ParamSet:
    if cfg.entry is None:
        raise ProfileError("OUT_OF_RANGE", "one of --R/--r/--a/--alpha/--lambda/--w-minus is required")
    name, value = cfg.entry
    if name == "R":
        # integer R only matters once a series is built
        return params_from_R(value, prec=cfg.precision_bits, allow_integer=cfg.command in ("params", "export"))
    return ENTRY[name](value, prec=cfg.precision_bits)


def cmd_params(cfg, out):
    p = _params(cfg)
    sp = special_points(p)
    d = p.as_dict()
    for k in ("r", "w_minus", "w_plus", "a", "alpha", "lam", "A", "R", "delta"):
        out(f"{k} = {mp.nstr(getattr(p, k), 20)}")
    out(f"P3 branch = {sp.P3_branch}")
    write_json(Path(cfg.out) / "params.json", cfg, {"params": d, "P3_branch": sp.P3_branch}, p.prec)
    return 0


def cmd_series(cfg, out):
    from .series import a_next_after_R, comparison_tables, compute_sonic_series, tau0_of

    p = _params(cfg)
    K = cfg.K or 200
    s = compute_sonic_series(p, K, precision_bits=cfg.precision_bits)
    rows = [(n, s.coeffs[n], s.abs_err[n]) for n in range(K + 1)]
    consts = {"K": K, "radius_estimate": s.radius_estimate(), "guard_bits": s.guard_bits, "residual": s.residual,
              "tau0": float(tau0_of(s))}
    out(f"K = {K}  guard bits = {s.guard_bits:.1f}  residual = {s.residual:.3g}")
    out(f"radius estimate = {consts['radius_estimate']:.6g}  tau0 = {consts['tau0']:.6g}")
    t = comparison_tables(p, s, strict=False)
    consts["comparison"] = {"M_positive": t.M_positive, "mu_star_increasing": t.mu_star_increasing,
                            "negative_discriminant": list(t.negative_discriminant),
                            "recurrence_residual": t.recurrence_residual}
    out(f"M_n positive = {t.M_positive}  mu* increasing = {t.mu_star_increasing}")
    if K >= int(mp.floor(p.R)) + 1:
        rep = a_next_after_R(p, s)
        consts["a_next"] = {"N": rep.N, "a_next": rep.a_next, "negative": rep.negative,
                            "ratio_band": rep.ratio_band, "ratio_range": rep.ratio_range}
        out(f"a_(N+1) = {mp.nstr(rep.a_next, 10)} (N = {rep.N}), a_n/M_n in [{rep.ratio_band[0]:.4g}, "
            f"{rep.ratio_band[1]:.4g}]")
    serialize(Path(cfg.out) / "series", cfg, SERIES_COLUMNS, rows, consts, s.precision_bits)
    return 0


def cmd_sinfty(cfg, out):
    from .series import s_infinity

    K = cfg.K or 100_000
    res = s_infinity(K, checkpoint=cfg.checkpoint)
    step = max(1, K // 2000)
    rows = [(n, float(res.ratio_trace[n - 1])) for n in range(1, K + 1, step)]
    consts = {k: getattr(res, k) for k in ("value", "error", "K", "C_fit", "last_ratio", "tail_bound",
                                           "truncation_bound", "envelope_ok", "passed")}
    serialize(Path(cfg.out) / "sinfty", cfg, SINF_COLUMNS, rows, consts)
    verdict = "PASS" if res.passed else "FAIL"
    out(f"S_inf estimate = {res.value:.6f}  error bar = {res.error:.6f}  (K = {K})")
    out(f"{verdict}: estimate - error = {res.value - res.error:.6f} {'>' if res.passed else '<='} 0.5")
    return 0 if res.passed else 2


def _shoot_one(args):
    from .shoot import find_R_N

    N, tol, margin = args
    return find_R_N(N, tol=tol, margin=margin)


def _shoot_all(cfg):
    jobs = [(N, cfg.bisect_tol, cfg.probe_margin) for N in cfg.N]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            return list(ex.map(_shoot_one, jobs))
    return [_shoot_one(j) for j in jobs]


def _shoot_consts(r):
    return {"N": r.N, "status": r.status, "lo": r.lo, "hi": r.hi, "R_N": r.R_N, "width": r.width,
            "tau_star": r.tau_star, "a_next_negative": r.a_next_negative, "message": r.message,
            "prec": r.prec, "K": r.K}


def cmd_shoot(cfg, out):
    if not cfg.N:
        raise ProfileError("OUT_OF_RANGE", "--N is required")
    code = 0
    for r in _shoot_all(cfg):
        rows = [tuple(getattr(g, c) for c in GAP_COLUMNS) for g in r.gap_history]
        serialize(Path(cfg.out) / f"shoot_N{r.N}", cfg, GAP_COLUMNS, rows, _shoot_consts(r), r.prec)
        line = f"N = {r.N}: {r.status}"
        if r.status == "CONVERGED":
            line += f"  R_N in [{mp.nstr(r.lo, 16)}, {mp.nstr(r.hi, 16)}]  width = {mp.nstr(r.width, 3)}"
        else:
            line += f"  {r.message}"
            code = 1
        out(line)
    return code


def _profile_for(cfg, out):
    from .profile import build_profile

    if cfg.entry is not None and cfg.entry[0] == "R":
        R, N = cfg.entry[1], (cfg.N[0] if cfg.N else None)
    else:
        if not cfg.N or len(cfg.N) != 1:
            raise ProfileError("OUT_OF_RANGE", "give one --N (or --R for a known R_N)")
        r = _shoot_one((cfg.N[0], cfg.bisect_tol, cfg.probe_margin))
        if r.status != "CONVERGED":
            raise ProfileError(r.status, f"shoot at N = {r.N}: {r.message}")
        out(f"R_{r.N} = {mp.nstr(r.R_N, 16)} (width {mp.nstr(r.width, 3)})")
        R, N = r.R_N, r.N
    return build_profile(R, N=N, n_side=cfg.n_side, sigma_max=cfg.sigma_max, sigma_floor=cfg.sigma_floor,
                         rtol=cfg.rtol), N


def _profile_consts(gp):
    sl = gp.slopes
    return {"meta": gp.meta, "x_A": gp.x_A, "sigma_1": gp.sigma_1, "sigma_A": gp.sigma_A, "tau_h": gp.tau_h,
            "eta_min": gp.eta_min, "stitch": gp.stitch,
            "sonic": {"e1": sl.e1, "e2": sl.e2, "e3": sl.e3, "e4": sl.e4, "c_minus": sl.c_minus,
                      "w_prime_0": sl.w_prime, "sigma_prime_0": sl.sigma_prime}}


def cmd_profile(cfg, out):
    gp, N = _profile_for(cfg, out)
    serialize(Path(cfg.out) / f"profile_N{N}", cfg, PROFILE_COLUMNS, gp.table(), _profile_consts(gp))
    out(f"{len(gp.x)} samples, x in [{gp.x[0]:.4g}, {gp.x[-1]:.4g}], x_A = {gp.x_A:.10g}, eta_min = {gp.eta_min:.6g}")
    return 0


def cmd_verify(cfg, out):
    from .fields import standard_certificates
    from .profile import verify_barriers, verify_repulsivity
    from .series import compute_sonic_series

    gp, N = _profile_for(cfg, out)
    rep = verify_repulsivity(gp, strict=False)
    p = gp.params
    s = compute_sonic_series(p, max(N + 15, 40) if N else 40)
    bar = verify_barriers(p, s, N, n=cfg.cert_samples, strict=False) if N else None
    certs = standard_certificates(p, cfg.cert_samples)
    ok = rep.ok and (bar is None or bar.ok) and all(c.ok for c in certs)
    consts = {"repulsivity": vars(rep), "barriers": vars(bar) if bar else None, "certificates": certs, "profile": _profile_consts(gp), "ok": ok}
    write_json(Path(cfg.out) / f"verify_N{N}.json", cfg, consts)
    out(f"eta_min = {rep.eta_min:.6g} (Lipschitz-corrected {rep.eta_lower:.6g})")
    out(f"limits: right {rep.limit_right:.6g} (1), left {rep.limit_left:.6g} ({rep.limit_left_expected:.6g})")
    out(f"decay: right {rep.decay_right:.6g} (-r), left {rep.decay_left:.6g} (-1)")
    out(f"Delta_1 zeros at x = {', '.join(f'{z:.6g}' for z in rep.delta1_zeros)}; x_A = {gp.x_A:.6g}")
    if bar:
        out(f"barriers: {'ok' if bar.ok else 'FAILED ' + ', '.join(bar.failures)}; tau_N = {mp.nstr(bar.tau_N, 8)}")
    for c in certs:
        out(f"certificate {c.name}: {'ok' if c.ok else 'FAILED'} (min bound {c.min_bound:.3g})")
    if not ok:
        raise VerificationError("VERIFICATION_FAILED", "; ".join(rep.failures + (bar.failures if bar else [])))
    out("PASS")
    return 0


def cmd_export(cfg, out):
    from .fields import delta2_curves, root_curves_w

    p = _params(cfg) if cfg.entry is not None else None
    gp = None
    if cfg.N:
        gp, _ = _profile_for(cfg, out)
        p = gp.params
    if p is None:
        raise ProfileError("OUT_OF_RANGE", "export needs --R (or another entry point) or --N")
    sp = special_points(p)
    labels = ("P1", "P2", "P3", "P4", "P5", "P5p", "P6", "Q2", "Q4", "Q5", "Q6")
    rows = [(lab, getattr(sp, lab)[0], getattr(sp, lab)[1]) for lab in labels]
    base = Path(cfg.out) / "portrait"
    write_csv(base / "special_points.csv", ("label", "first", "second"), rows, p.prec)
    sig = np.linspace(1e-3, 2.0, 800)
    curve_rows = []
    for sg in sig:
        w1 = root_curves_w(p, float(sg))
        d2 = delta2_curves(p, float(sg))
        curve_rows.append((sg, 1 - sg, 1 + sg, *w1, *(d2 if d2 else (float("nan"), float("nan")))))
    write_csv(base / "zero_curves.csv", ("sigma", "delta_lo", "delta_hi", "delta1_w1", "delta1_w2", "delta1_w3",
                                         "delta2_minus", "delta2_plus"), curve_rows)
    consts = {"params": p.as_dict(), "P3_branch": sp.P3_branch, "sigma_range": [sig[0], sig[-1]],
              "note": "first/second are (sigma, w) for P points and (tau, u) for Q points"}
    if gp is not None:
        write_csv(base / "trajectory.csv", ("x", "sigma", "w"), zip(gp.x, gp.sigma, gp.w))
        consts["trajectory"] = {"x_A": gp.x_A, "samples": len(gp.x)}
    write_json(base / "portrait.json", cfg, consts, p.prec)
    out(f"wrote {base}")
    return 0


COMMANDS = {"params": cmd_params, "series": cmd_series, "sinfty": cmd_sinfty, "shoot": cmd_shoot,
            "profile": cmd_profile, "verify": cmd_verify, "export": cmd_export}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "USAGE", "message": message}) + "\n")
        sys.exit(EX_USAGE)


def build_parser():
    ap = _Parser(prog="euler-implosion", description="Imploding self-similar Euler profiles at gamma = 5/3.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--prec", type=int, default=int(os.environ.get(PREC_ENV, DEFAULT_PREC)),
                        help=f"working precision in bits (env {PREC_ENV})")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--threads", type=int, default=int(os.environ.get(THREADS_ENV, "1")),
                        help=f"worker processes for multi-N runs (env {THREADS_ENV})")
        g = sp.add_mutually_exclusive_group()
        for key in ENTRY:
            g.add_argument(f"--{key.replace('_', '-')}", dest=f"entry_{key}", metavar="X")
        sp.add_argument("--N", type=int, nargs="+")
        sp.add_argument("--K", type=int)
        sp.add_argument("--rtol", type=float, default=1e-12)
        sp.add_argument("--tol", type=float, default=1e-10, help="bisection bracket width")
        sp.add_argument("--margin", type=float, default=1e-3, help="probe distance from the integers")
        sp.add_argument("--samples", type=int, default=4096, help="certificate cells")
        sp.add_argument("--n-side", type=int, default=4096)
        sp.add_argument("--sigma-max", type=float, default=1e4)
        sp.add_argument("--sigma-floor", type=float, default=1e-6)
        sp.add_argument("--checkpoint")
    return ap


def config_from_args(ns) -> RunConfig:
    entry = None
    for key in ENTRY:
        v = getattr(ns, f"entry_{key}")
        if v is not None:
            entry = (key, v)
    cfg = RunConfig(command=ns.command, entry=entry, N=ns.N, K=ns.K, precision_bits=ns.prec, rtol=ns.rtol,
                    bisect_tol=ns.tol, probe_margin=ns.margin, cert_samples=ns.samples, n_side=ns.n_side,
                    sigma_max=ns.sigma_max, sigma_floor=ns.sigma_floor, out=ns.out, checkpoint=ns.checkpoint,
                    threads=ns.threads)
    cfg.validate()
    return cfg


def cli_main(argv=None, out=print) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.command](cfg, out)
    except VerificationError as e:
        sys.stderr.write(json.dumps({"error": e.code, "message": str(e)}) + "\n")
        return e.exit_code
    except ProfileError as e:
        sys.stderr.write(json.dumps({"error": e.code, "message": str(e)}) + "\n")
        return e.exit_code


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
