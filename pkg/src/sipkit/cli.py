"""Command-line driver: ``sipkit {sip,resample,simulate,semisynth,qq}``.

Every run writes delimited tables, a plain-text report, a resolved-config
JSON document and a manifest into ``--out-dir`` (default: the directory
named by ``SIPKIT_OUTPUT_DIR``, else ``./sipkit-output``).  Exit status is
0 on success, 1 on numerical or I/O failure and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CohortFormatError, InvalidArgumentError, SipError
from .glm import Dataset
from .io import (
    COHORT_COLUMNS,
    QQ_COLUMNS,
    STUDY_COLUMNS,
    RunWriter,
    default_output_dir,
    load_cohort,
    qq_records,
    read_csv,
    resolve_study,
    row_dict,
    text_table,
    write_csv,
)
from .plotting import plot_qq
from .resampling import resample_sips, summarize_draws
from .sip import sip_averaged, sip_point
from .study import qq_series, run_study, semi_synthetic_study

log = logging.getLogger("sipkit")

SIP_COLUMNS = ("label", "covariate", "sip")
RESAMPLE_COLUMNS = ("label", "covariate", "estimate", "resampling_sd", "ci_lower", "ci_upper")
ESTIMATE_COLUMNS = ("covariate", "estimate", "ci_lower", "ci_upper")
REFERENCE_COLUMNS = ("covariate", "reference")


class UsageError(Exception):
    """Bad flag values detected after parsing; mapped to exit status 2."""


def _level(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {text}")
    return v


def _count(minimum: int):
    def parse(text: str) -> int:
        v = int(text)
        if v < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {text}")
        return v

    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sipkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, data=True, seed=False):
        sp.add_argument("--out-dir", type=Path, default=None, help="output directory")
        if data:
            sp.add_argument("--data", required=True, type=Path, help="cohort CSV with a header row")
            sp.add_argument("--treatment", required=True, help="name of the 0/1 treatment column")
            sp.add_argument("--id-column", default=None, help="column holding subject IDs")
            sp.add_argument("--permissive-fits", action="store_true",
                            help="keep going when a fit is flagged for separation")
        if seed:
            sp.add_argument("--seed", required=True, type=int, help="root random seed")

    sp = sub.add_parser("sip", help="SIPs of an observed cohort")
    common(sp)
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--at", default=None, help="evaluate at one subject (row index or ID)")
    mode.add_argument("--averaged", action="store_true", help="average over all subjects (default)")

    sp = sub.add_parser("resample", help="SIPs with Exp(1)-weighted resampling SDs and CIs")
    common(sp, seed=True)
    sp.add_argument("--draws", required=True, type=_count(2), help="number of resamples R")
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--at", default=None, help="evaluate at one subject (row index or ID)")

    sp = sub.add_parser("simulate", help="Monte Carlo study on a built-in or JSON-configured design")
    common(sp, data=False, seed=True)
    sp.add_argument("--study", required=True, help="study1, study2 or a JSON config path")
    sp.add_argument("--reps", type=_count(2), default=None)
    sp.add_argument("--draws", type=_count(2), default=None)
    sp.add_argument("--n", type=_count(2), default=None, help="sample size per replication")
    sp.add_argument("--truth-n", type=_count(2), default=None, help="size of the truth dataset")
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--workers", type=_count(1), default=1)
    sp.add_argument("--permissive-fits", action="store_true")

    sp = sub.add_parser("semisynth", help="semi-synthetic study over a fixed cohort")
    common(sp, seed=True)
    sp.add_argument("--reps", required=True, type=_count(2))
    sp.add_argument("--draws", required=True, type=_count(2))
    sp.add_argument("--subject", default=None, help="subject row index, or ID with --id-column")
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--workers", type=_count(1), default=1)

    sp = sub.add_parser("qq", help="Q-Q plot from estimate and reference CSVs")
    sp.add_argument("--estimates", required=True, type=Path,
                    help=f"CSV with columns {','.join(ESTIMATE_COLUMNS)}")
    sp.add_argument("--reference", required=True, type=Path,
                    help=f"CSV with columns {','.join(REFERENCE_COLUMNS)}")
    sp.add_argument("--out", required=True, type=Path, help="figure path (.svg, .png or .pdf)")
    sp.add_argument("--title", default=None)
    return p


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _subject_row(data: Dataset, token: str | None, id_column: str | None) -> int | None:
    if token is None:
        return None
    if id_column is not None:
        return data.row_of(token)
    try:
        row = int(token)
    except ValueError:
        raise UsageError(f"subject {token!r} is not a row index; pass --id-column to address by ID")
    if not 0 <= row < data.n:
        raise UsageError(f"subject row {row} out of range 0..{data.n - 1}")
    return row


def _sip_records(per, overall, names) -> list[dict]:
    recs = [{"label": f"SIP_{k + 1}", "covariate": n, "sip": v} for k, (n, v) in enumerate(zip(names, per))]
    recs.append({"label": "SIP", "covariate": "overall", "sip": overall})
    return recs


def _emit_table(w: RunWriter, stem: str, title: str, columns, records) -> None:
    write_csv(w.path(f"{stem}.csv"), columns, records)
    w.path(f"{stem}.txt").write_text(text_table(title, columns, records))


def _emit_qq(w: RunWriter, stem: str, series) -> None:
    write_csv(w.path(f"{stem}.csv"), QQ_COLUMNS, qq_records(series))
    plot_qq(series, w.path(f"{stem}.svg"))


def _data_args(args) -> dict:
    return {
        "data": str(args.data),
        "data_sha256": _digest(args.data) if args.data.is_file() else None,
        "treatment": args.treatment,
        "id_column": args.id_column,
        "permissive_fits": args.permissive_fits,
    }


def cmd_sip(args, out: Path) -> None:
    data = load_cohort(args.data, args.treatment, args.id_column)
    row = _subject_row(data, args.at, args.id_column)
    w = RunWriter(out, "sip", None, {**_data_args(args), "at": args.at, "row": row})
    if row is None:
        res = sip_averaged(data, permissive=args.permissive_fits)
        title = f"SIPs averaged over {data.n} subjects"
    else:
        res = sip_point(data, data.covariates[row], permissive=args.permissive_fits)
        title = f"SIPs at subject row {row}"
    if res.flagged:
        log.warning("fits flagged for separation: %s", list(res.flagged))
    _emit_table(w, "sip_table", title, SIP_COLUMNS, _sip_records(res.per_covariate, res.overall, data.names))
    w.finish()


def cmd_resample(args, out: Path) -> None:
    data = load_cohort(args.data, args.treatment, args.id_column)
    row = _subject_row(data, args.at, args.id_column)
    point = None if row is None else data.covariates[row]
    w = RunWriter(out, "resample", args.seed, {
        **_data_args(args), "at": args.at, "row": row, "draws": args.draws, "level": args.level,
    })
    if point is None:
        est = sip_averaged(data, permissive=args.permissive_fits)
    else:
        est = sip_point(data, point, permissive=args.permissive_fits)
    draws = resample_sips(data, args.draws, args.seed, point, permissive=args.permissive_fits)
    s = summarize_draws(draws, args.level)
    recs = [
        {"label": f"SIP_{k + 1}", "covariate": n, "estimate": est.per_covariate[k],
         "resampling_sd": s.per_covariate_sd[k], "ci_lower": s.per_covariate_ci[k, 0],
         "ci_upper": s.per_covariate_ci[k, 1]}
        for k, n in enumerate(data.names)
    ]
    recs.append({"label": "SIP", "covariate": "overall", "estimate": est.overall,
                 "resampling_sd": s.overall_sd, "ci_lower": s.overall_ci[0], "ci_upper": s.overall_ci[1]})
    title = f"SIPs with {s.draws} resamples ({s.failed} failed), {args.level:.0%} percentile CIs"
    _emit_table(w, "resample_table", title, RESAMPLE_COLUMNS, recs)
    w.finish()


def cmd_simulate(args, out: Path) -> None:
    config = resolve_study(args.study)
    changes = {k: v for k, v in (("n", args.n), ("truth_n", args.truth_n)) if v is not None}
    if changes:
        config = config.replace(**changes)
    reps = config.reps if args.reps is None else args.reps
    R = config.resamples if args.draws is None else args.draws
    w = RunWriter(out, "simulate", args.seed, {
        "study": config.to_dict(), "reps": reps, "draws": R, "level": args.level,
        "permissive_fits": args.permissive_fits,
    })
    progress = _progress("replication") if args.verbose else None
    res = run_study(config, args.seed, reps=reps, resamples=R, level=args.level,
                    permissive=args.permissive_fits, workers=args.workers, progress=progress)
    rows = res.rows
    recs = [row_dict(r) for r in rows]
    title = (f"{config.name}: {res.reps} replications of n={config.n}, R={R}, "
             f"truth n={config.truth_n}, {len(res.failures)} failed")
    _emit_table(w, "simulate_table", title, STUDY_COLUMNS, recs)
    qq = res.qq()
    _emit_qq(w, "simulate_qq", qq)
    write_csv(w.path("simulate_estimates.csv"), ESTIMATE_COLUMNS, [
        {"covariate": n, "estimate": p[1], "ci_lower": p[2], "ci_upper": p[3]}
        for n, p in zip(qq.names, qq.points)
    ])
    write_csv(w.path("simulate_reference.csv"), REFERENCE_COLUMNS, [
        {"covariate": n, "reference": v} for n, v in zip(res.names, res.reference)
    ])
    w.finish()


def cmd_semisynth(args, out: Path) -> None:
    data = load_cohort(args.data, args.treatment, args.id_column)
    row = _subject_row(data, args.subject, args.id_column)
    w = RunWriter(out, "semisynth", args.seed, {
        **_data_args(args), "reps": args.reps, "draws": args.draws, "level": args.level,
        "subject": args.subject, "row": row,
    })
    progress = _progress("replication") if args.verbose else None
    res = semi_synthetic_study(data, args.reps, args.draws, args.seed, level=args.level,
                               permissive=args.permissive_fits, workers=args.workers, progress=progress)
    title = f"semi-synthetic cohort summary: {res.reps} replications, R={args.draws}"
    _emit_table(w, "semisynth_cohort", title, COHORT_COLUMNS, [row_dict(r) for r in res.cohort_table()])
    _emit_qq(w, "semisynth_qq", res.qq())
    if row is not None:
        who = f"ID {args.subject} (row {row})" if args.id_column else f"row {row}"
        _emit_table(w, "semisynth_subject", f"semi-synthetic SIPs for subject {who}",
                    COHORT_COLUMNS, [row_dict(r) for r in res.subject_table(row)])
        _emit_qq(w, "semisynth_subject_qq", res.qq(row))
    w.finish()


def _read_columns(path: Path, columns) -> list[dict[str, str]]:
    try:
        recs = read_csv(path)
    except OSError as exc:
        raise CohortFormatError(f"cannot read {path}: {exc}") from None
    if not recs:
        raise CohortFormatError(f"{path}: no data rows")
    missing = [c for c in columns if c not in recs[0]]
    if missing:
        raise CohortFormatError(f"{path}: missing columns {missing}")
    return recs


def _floats(recs, column, path) -> np.ndarray:
    try:
        return np.array([float(r[column]) for r in recs])
    except ValueError as exc:
        raise CohortFormatError(f"{path}: column {column!r}: {exc}") from None


def cmd_qq(args, out: Path | None) -> None:
    est = _read_columns(args.estimates, ESTIMATE_COLUMNS)
    ref = _read_columns(args.reference, REFERENCE_COLUMNS)
    series = qq_series(
        _floats(est, "estimate", args.estimates),
        np.column_stack([_floats(est, c, args.estimates) for c in ("ci_lower", "ci_upper")]),
        _floats(ref, "reference", args.reference),
        args.title or "",
        tuple(r["covariate"] for r in est),
    )
    w = RunWriter(out if out is not None else args.out.parent, "qq", None, {
        "estimates": str(args.estimates), "estimates_sha256": _digest(args.estimates),
        "reference": str(args.reference), "reference_sha256": _digest(args.reference),
        "out": str(args.out), "title": args.title,
    })
    w.outputs.append(plot_qq(series, args.out, title=args.title))
    w.finish()


def _progress(what: str):
    def report(done: int, total: int) -> None:
        log.info("%s %d/%d", what, done, total)

    return report


COMMANDS = {
    "sip": cmd_sip,
    "resample": cmd_resample,
    "simulate": cmd_simulate,
    "semisynth": cmd_semisynth,
    "qq": cmd_qq,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = getattr(args, "out_dir", None)
    if out is None and args.command != "qq":
        out = default_output_dir()
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.error(str(exc))
    except InvalidArgumentError as exc:
        if args.command == "simulate" and "neither a built-in study" in str(exc):
            parser.error(str(exc))
        print(f"sipkit: error: {exc}", file=sys.stderr)
        return 1
    except (SipError, OSError, ValueError) as exc:
        print(f"sipkit: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
