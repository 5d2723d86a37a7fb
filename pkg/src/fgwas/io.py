"""CSV, JSON-lines and npz formats read and written by the command-line tool."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .basis import RangeViolationError
from .diagnostics import psrf_or_inf
from .model import LongitudinalDataset, encode_genotypes
from .sampler.chains import ARRAY_FIELDS, ChainDraws, ChainSet

PHENOTYPE_HEADER = ("subject_id", "time", "value")
CALL_TO_GENOTYPE = {"0": "aa", "1": "Aa", "2": "AA", "NA": None}
GENOTYPE_TO_CALL = {-1.0: "0", 0.0: "1", 1.0: "2"}
BAND_HEADER = ("time", "additive_lo", "additive_mean", "additive_hi",
               "dominant_lo", "dominant_mean", "dominant_hi")
SUMMARY_HEADER = ("parameter", "mean", "sd", "q2.5", "q50", "q97.5", "psrf")
META_NAME = "meta.json"


class DataFormatError(ValueError):
    """A record could not be parsed; carries the file, line and column."""

    def __init__(self, path, line: int, column: str | int | None, message: str):
        self.path, self.line, self.column = str(path), line, column
        where = f"{path}, line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{where}: {message}")


def fmt(x) -> str:
    return repr(float(x))


def _read_rows(path):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(path, 1, None, "empty file") from None
        rows = [(reader.line_num, row) for row in reader if row and any(c.strip() for c in row)]
    return path, header, rows


def _float(path, line, column, text) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(path, line, column, f"cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataFormatError(path, line, column, f"non-finite value {text!r}")
    return value


def read_phenotypes(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Long-format ``subject_id,time,value`` rows grouped by subject in file order."""
    path, header, rows = _read_rows(path)
    if tuple(header) != PHENOTYPE_HEADER:
        raise DataFormatError(path, 1, None, f"header must be {','.join(PHENOTYPE_HEADER)}")
    data: dict[str, list] = {}
    for line, row in rows:
        if len(row) != 3:
            raise DataFormatError(path, line, None, f"expected 3 fields, got {len(row)}")
        sid = row[0].strip()
        t = _float(path, line, "time", row[1])
        y = _float(path, line, "value", row[2])
        series = data.setdefault(sid, [])
        if series and t <= series[-1][0]:
            raise DataFormatError(path, line, "time",
                                  f"times of subject {sid} must be strictly increasing")
        series.append((t, y))
    return {sid: (np.array([t for t, _ in s]), np.array([y for _, y in s])) for sid, s in data.items()}


def _read_wide(path, kind: str):
    path, header, rows = _read_rows(path)
    if not header or header[0] != "subject_id" or len(header) < 2:
        raise DataFormatError(path, 1, None, f"{kind} header must be subject_id,<name>...")
    names = header[1:]
    table = {}
    for line, row in rows:
        if len(row) != len(header):
            raise DataFormatError(path, line, None, f"expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        if sid in table:
            raise DataFormatError(path, line, "subject_id", f"duplicate subject {sid}")
        table[sid] = (line, [c.strip() for c in row[1:]])
    return path, names, table


def load_dataset(phenotype_path, genotype_path, covariate_path=None, basis_order: int = 4,
                 time_range=None, impute_seed: int = 0) -> LongitudinalDataset:
    """Join phenotype, genotype and covariate files on ``subject_id``.

    Subjects follow the phenotype file order. Genotype calls 0/1/2/NA mean
    aa/Aa/AA/missing; missing calls are imputed from observed frequencies.
    """
    pheno = read_phenotypes(phenotype_path)
    gpath, snp_names, gtable = _read_wide(genotype_path, "genotype")
    for sid, (line, _) in gtable.items():
        if sid not in pheno:
            raise DataFormatError(gpath, line, "subject_id", f"unknown subject id {sid!r}")
    ids = list(pheno)
    calls = []
    for sid in ids:
        if sid not in gtable:
            raise DataFormatError(gpath, 0, "subject_id", f"no genotype record for subject {sid!r}")
        line, row = gtable[sid]
        out = []
        for name, call in zip(snp_names, row):
            if call not in CALL_TO_GENOTYPE:
                raise DataFormatError(gpath, line, name, f"genotype call must be 0, 1, 2 or NA, got {call!r}")
            out.append(CALL_TO_GENOTYPE[call])
        calls.append(out)
    genotypes = encode_genotypes(np.array(calls, dtype=object).reshape(len(ids), len(snp_names)),
                                 seed=impute_seed, snp_names=snp_names)

    cov_names: list[str] = []
    X = np.zeros((len(ids), 0))
    if covariate_path is not None:
        cpath, cov_names, ctable = _read_wide(covariate_path, "covariate")
        for sid, (line, _) in ctable.items():
            if sid not in pheno:
                raise DataFormatError(cpath, line, "subject_id", f"unknown subject id {sid!r}")
        X = np.zeros((len(ids), len(cov_names)))
        for i, sid in enumerate(ids):
            if sid not in ctable:
                raise DataFormatError(cpath, 0, "subject_id", f"no covariate record for subject {sid!r}")
            line, row = ctable[sid]
            for k, (name, text) in enumerate(zip(cov_names, row)):
                X[i, k] = _float(cpath, line, name, text)

    times = [pheno[sid][0] for sid in ids]
    ys = [pheno[sid][1] for sid in ids]
    try:
        return LongitudinalDataset.from_arrays(times, ys, X, genotypes, basis_order, time_range=time_range,
                                               subject_ids=ids, covariate_names=tuple(cov_names))
    except RangeViolationError as err:
        raise DataFormatError(phenotype_path, 0, "time", str(err)) from None


def save_dataset(dataset: LongitudinalDataset, out_dir) -> dict[str, Path]:
    """Write phenotypes.csv, genotypes.csv, covariates.csv and meta.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.csv" for k in ("phenotypes", "genotypes", "covariates")}
    with paths["phenotypes"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PHENOTYPE_HEADER)
        for s in dataset.subjects:
            for t, y in zip(s.grid.raw_times, s.y):
                w.writerow((s.subject_id, fmt(t), fmt(y)))
    g = dataset.genotypes
    with paths["genotypes"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("subject_id",) + tuple(g.snp_names))
        for s, row in zip(dataset.subjects, g.additive):
            w.writerow([s.subject_id] + [GENOTYPE_TO_CALL[float(x)] for x in row])
    if dataset.q:
        with paths["covariates"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("subject_id",) + tuple(dataset.covariate_names))
            for s in dataset.subjects:
                w.writerow([s.subject_id] + [fmt(x) for x in s.covariates])
    else:
        del paths["covariates"]
    write_meta(out, dataset)
    paths["meta"] = out / META_NAME
    return paths


def write_meta(out_dir, dataset: LongitudinalDataset, **extra) -> Path:
    meta = {
        "time_range": list(map(float, dataset.time_range)),
        "basis_order": dataset.v,
        "degree": dataset.v - 1,
        "n": dataset.n, "p": dataset.p, "q": dataset.q,
        "covariate_names": list(dataset.covariate_names),
    }
    meta.update(extra)
    path = Path(out_dir) / META_NAME
    path.write_text(json.dumps(meta, indent=2) + "\n")
    return path


def read_meta(out_dir) -> dict:
    path = Path(out_dir) / META_NAME
    return json.loads(path.read_text()) if path.exists() else {}


def load_dataset_dir(data_dir, basis_order: int | None = None) -> LongitudinalDataset:
    """Load the three files written by :func:`save_dataset`, honouring meta.json."""
    d = Path(data_dir)
    meta = read_meta(d)
    cov = d / "covariates.csv"
    order = basis_order or meta.get("basis_order", 4)
    tr = tuple(meta["time_range"]) if "time_range" in meta else None
    return load_dataset(d / "phenotypes.csv", d / "genotypes.csv", cov if cov.exists() else None,
                        basis_order=order, time_range=tr)


# -- chains ----------------------------------------------------------------

def save_chains(chains: ChainSet, path) -> Path:
    path = Path(path)
    arrays = {name: chains.stacked(name) for name in ARRAY_FIELDS}
    np.savez_compressed(
        path, **arrays,
        rho_accepted=np.array([c.rho_accepted for c in chains.chains]),
        rho_proposed=np.array([c.rho_proposed for c in chains.chains]),
        active_add=np.asarray(chains.active_add, bool), active_dom=np.asarray(chains.active_dom, bool),
        snp_names=np.array(chains.snp_names, dtype=str),
        flags=np.array([chains.converged, chains.penalized]), burn_in_iters=chains.burn_in_iters,
    )
    return path


def load_chains(path) -> ChainSet:
    with np.load(path, allow_pickle=False) as z:
        n_chains = z["sigma2"].shape[0]
        draws = []
        for k in range(n_chains):
            ch = ChainDraws(**{name: z[name][k] for name in ARRAY_FIELDS})
            ch.rho_accepted = int(z["rho_accepted"][k])
            ch.rho_proposed = int(z["rho_proposed"][k])
            draws.append(ch)
        converged, penalized = (bool(x) for x in z["flags"])
        return ChainSet(chains=draws, converged=converged, burn_in_iters=int(z["burn_in_iters"]),
                        penalized=penalized, active_add=z["active_add"], active_dom=z["active_dom"],
                        snp_names=tuple(str(s) for s in z["snp_names"]))


def _scalar_traces(chains: ChainSet, covariate_names=()):
    """Yield (name, (n_chains, L) traces) for every scalar parameter in the fit."""
    yield "sigma2", chains.stacked("sigma2")
    yield "rho", chains.stacked("rho")
    if chains.penalized:
        yield "lambda2", chains.stacked("lambda2")
        yield "lambda2_star", chains.stacked("lambda2_star")
    m = chains.stacked("m")
    for a in range(m.shape[-1]):
        yield f"m[{a}]", m[..., a]
    r = chains.stacked("r")
    for k in range(r.shape[2]):
        label = covariate_names[k] if k < len(covariate_names) else f"r{k + 1}"
        for a in range(r.shape[-1]):
            yield f"r[{label}][{a}]", r[:, :, k, a]
    for key, mask in (("b", chains.active_add), ("c", chains.active_dom)):
        arr = chains.stacked(key)
        for j in np.flatnonzero(mask):
            for a in range(arr.shape[-1]):
                yield f"{key}[{chains.snp_names[j]}][{a}]", arr[:, :, j, a]


def write_summary(chains: ChainSet, path, covariate_names=()) -> Path:
    """Posterior mean, sd, 2.5/50/97.5% quantiles and PSRF of every scalar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for name, tr in _scalar_traces(chains, covariate_names):
            flat = tr.reshape(-1)
            q = np.quantile(flat, [0.025, 0.5, 0.975], method="linear")
            ps = psrf_or_inf(tr).psrf if tr.shape[1] >= 10 else float("nan")
            w.writerow((name, fmt(flat.mean()), fmt(flat.std(ddof=1) if flat.size > 1 else 0.0),
                        fmt(q[0]), fmt(q[1]), fmt(q[2]), fmt(ps)))
    return path


def read_table(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_draws_jsonl(chains: ChainSet, path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for k, ch in enumerate(chains.chains):
            for s in range(len(ch)):
                rec = {"chain": k, "draw": s}
                for name in ARRAY_FIELDS:
                    val = getattr(ch, name)[s]
                    rec[name] = val.tolist() if np.ndim(val) else float(val)
                fh.write(json.dumps(rec) + "\n")
    return path


def read_draws_jsonl(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_psrf_report(report, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("scalar", "psrf", "within_var", "marginal_var", "below_threshold"))
        for name, e in report.entries.items():
            w.writerow((name, fmt(e.psrf), fmt(e.within_var), fmt(e.marginal_var),
                        int(e.psrf < report.threshold)))
    return path


# -- selection and refit ---------------------------------------------------

def write_selection(report, path) -> Path:
    """One row per SNP: flags, then mean/lo/hi for each Legendre coefficient."""
    path = Path(path)
    v = report.additive_mean.shape[1]
    header = ["snp", "additive_selected", "dominant_selected"]
    for kind in ("additive", "dominant"):
        for a in range(v):
            header += [f"{kind}_mean_{a}", f"{kind}_lo_{a}", f"{kind}_hi_{a}"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        sa, sd = report.additive_selected, report.dominant_selected
        for j, name in enumerate(report.snp_names):
            row = [name, int(sa[j]), int(sd[j])]
            for mean, iv in ((report.additive_mean, report.additive_intervals),
                             (report.dominant_mean, report.dominant_intervals)):
                for a in range(v):
                    row += [fmt(mean[j, a]), fmt(iv[j, a, 0]), fmt(iv[j, a, 1])]
            w.writerow(row)
    return path


def read_selection(path):
    """Inverse of :func:`write_selection`."""
    from .inference import SelectionReport

    rows = read_table(path)
    if not rows:
        raise DataFormatError(path, 1, None, "selection file has no SNP rows")
    v = sum(1 for k in rows[0] if k.startswith("additive_mean_"))
    p = len(rows)
    means = {k: np.zeros((p, v)) for k in ("additive", "dominant")}
    ivs = {k: np.zeros((p, v, 2)) for k in ("additive", "dominant")}
    for j, row in enumerate(rows):
        for kind in ("additive", "dominant"):
            for a in range(v):
                means[kind][j, a] = _float(path, j + 2, f"{kind}_mean_{a}", row[f"{kind}_mean_{a}"])
                ivs[kind][j, a, 0] = _float(path, j + 2, f"{kind}_lo_{a}", row[f"{kind}_lo_{a}"])
                ivs[kind][j, a, 1] = _float(path, j + 2, f"{kind}_hi_{a}", row[f"{kind}_hi_{a}"])
    level = float(read_meta(Path(path).parent).get("level", 0.95))
    return SelectionReport(tuple(r["snp"] for r in rows), level, ivs["additive"], ivs["dominant"],
                           means["additive"], means["dominant"])


REFIT_HEADER = ("block", "snp", "coefficient", "mean", "sd", "lo", "hi")


def write_refit(summary, path, snp_names, covariate_names=()) -> Path:
    """Rows for m, every r_k and every refit block, one per Legendre coefficient."""
    path = Path(path)
    st = summary.mean
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REFIT_HEADER)

        def rows(block, label, mean, sd, iv):
            for a in range(len(mean)):
                w.writerow((block, label, a, fmt(mean[a]), fmt(sd[a]), fmt(iv[a, 0]), fmt(iv[a, 1])))

        rows("mean", "", st.m, summary.sd["m"], summary.intervals["m"])
        for k in range(st.r.shape[0]):
            label = covariate_names[k] if k < len(covariate_names) else f"r{k + 1}"
            rows("covariate", label, st.r[k], summary.sd["r"][k], summary.intervals["r"][k])
        for j, kind in summary.blocks:
            mean, sd, iv = summary.coefficient(j, kind)
            rows(kind, snp_names[j], mean, sd, iv)
        for key in ("sigma2", "rho"):
            w.writerow((key, "", 0, fmt(getattr(st, key)), fmt(summary.sd[key]),
                        fmt(summary.intervals[key][0]), fmt(summary.intervals[key][1])))
    return path


def read_refit(path) -> dict[tuple[str, str], dict[str, np.ndarray]]:
    """Map (block, snp) to arrays ``mean``, ``sd``, ``lo``, ``hi`` over coefficients."""
    rows = read_table(path)
    out: dict[tuple[str, str], dict[str, list]] = {}
    for line, row in enumerate(rows, start=2):
        rec = out.setdefault((row["block"], row["snp"]), {"mean": [], "sd": [], "lo": [], "hi": []})
        for key in rec:
            rec[key].append(_float(path, line, key, row[key]))
    return {k: {kk: np.array(vv) for kk, vv in rec.items()} for k, rec in out.items()}


def write_bic(sweep, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("degree", "n_blocks", "bic", "chosen"))
        for d, score in sweep.bic.items():
            w.writerow((d, len(sweep.refits[d].blocks), fmt(score), int(d == sweep.chosen)))
    return path


def write_band(path, raw_times, additive, dominant) -> Path:
    """``additive``/``dominant`` are (lo, mean, hi) arrays over ``raw_times``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BAND_HEADER)
        for k, t in enumerate(raw_times):
            w.writerow([fmt(t)] + [fmt(a[k]) for a in additive] + [fmt(d[k]) for d in dominant])
    return path


def read_band(path) -> dict[str, np.ndarray]:
    rows = read_table(path)
    return {h: np.array([_float(path, i + 2, h, r[h]) for i, r in enumerate(rows)]) for h in BAND_HEADER}
