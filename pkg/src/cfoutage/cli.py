"""Reproducible experiment runner.

Experiments are driven by a JSON config (all fields optional; defaults
reproduce the standard network setup) plus a few command-line overrides:

    cfoutage --experiment sinr-cdf --config cfg.json --seed 7 --out results/

Outputs are CSV/JSON files written atomically, each carrying a provenance
comment (config hash + seed).  Exit codes: 0 success, 2 config error,
3 numerical failure, 4 oracle/acceptance check failure.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import igsum, rateadapt, receiver, scenario
from .kernels import KernelConvergenceError

EXPERIMENTS = ("sinr-cdf", "outage-curve", "oracle-check", "scenario-dump",
               "diag-covariance")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK_FAILED = 4


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the field path."""


@dataclasses.dataclass
class ExperimentSpec:
    scenario: scenario.ScenarioConfig
    combiner: str = "RZF"
    experiment: str = "sinr-cdf"
    k_u_list: tuple = (50, 100)
    epsilon_list: tuple = (0.01, 0.05, 0.1)
    margin_db_list: tuple = (3.0, 6.0, 10.0, 13.0)
    ue_presets: tuple = ("center", "edge")
    output_dir: str = "out"
    n_mc_stats: int = 5000
    n_mc_drop: int = 1000
    n_mc_validation: int = 500
    n_fit_drops: int = 200
    n_validation_drops: int = 2000
    n_diag_drops: int = 50
    n_points: int = 1 << 16
    threads: int = -1

    def procedure_config(self):
        return rateadapt.ProcedureConfig(
            n_fit_drops=self.n_fit_drops,
            n_mc_stats=self.n_mc_stats,
            n_mc_drop=self.n_mc_drop,
            n_mc_validation=self.n_mc_validation,
            n_validation_drops=self.n_validation_drops,
            quad=igsum.QuadratureSpec(n_points=self.n_points),
            n_jobs=self.threads,
        )


_SCENARIO_FIELDS = {
    "L": int, "L_s": int, "N": int, "K_n": int, "K_u": int,
    "p_mw": (int, float), "noise_dbm": (int, float),
    "tau_c": int, "tau_p": int,
    "serving_radius": (int, float), "annulus": list,
    "pathloss": dict, "shadowing": dict,
    "asd_deg": (int, float), "corr_model": str, "ue_preset": str,
    "seed": int,
}

_SPEC_FIELDS = {
    "scenario": dict, "combiner": str, "experiment": str,
    "k_u_list": list, "epsilon_list": list, "margin_db_list": list,
    "ue_presets": list, "output_dir": str,
    "n_mc_stats": int, "n_mc_drop": int, "n_mc_validation": int,
    "n_fit_drops": int, "n_validation_drops": int, "n_diag_drops": int,
    "n_points": int, "threads": int,
}


def _check_keys(mapping, allowed, path):
    for key, value in mapping.items():
        if key not in allowed:
            raise ConfigError(f"unknown key at {path}{key}")
        expected = allowed[key]
        if not isinstance(value, expected):
            raise ConfigError(
                f"bad type at {path}{key}: expected "
                f"{getattr(expected, '__name__', expected)}, "
                f"got {type(value).__name__}")


def _scenario_from_dict(raw, path="scenario."):
    _check_keys(raw, _SCENARIO_FIELDS, path)
    kwargs = dict(raw)
    if "annulus" in kwargs:
        ann = kwargs["annulus"]
        if len(ann) != 2:
            raise ConfigError(f"bad value at {path}annulus: need [r_min, r_max]")
        kwargs["annulus"] = (float(ann[0]), float(ann[1]))
    if "pathloss" in kwargs:
        _check_keys(kwargs["pathloss"],
                    {"intercept_db": (int, float),
                     "exponent_decades": (int, float)}, path + "pathloss.")
        kwargs["pathloss"] = scenario.PathlossModel(**kwargs["pathloss"])
    if "shadowing" in kwargs:
        _check_keys(kwargs["shadowing"],
                    {"std_db": (int, float), "decorrelation_m": (int, float)},
                    path + "shadowing.")
        kwargs["shadowing"] = scenario.ShadowingModel(**kwargs["shadowing"])
    try:
        return scenario.ScenarioConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


def parse_config(path):
    """Validated ExperimentSpec from a JSON file (empty file = defaults)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read().strip()
    raw = json.loads(text) if text else {}
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a JSON object")
    _check_keys(raw, _SPEC_FIELDS, "")
    kwargs = dict(raw)
    kwargs["scenario"] = _scenario_from_dict(kwargs.get("scenario", {}))
    for key in ("k_u_list", "epsilon_list", "margin_db_list", "ue_presets"):
        if key in kwargs:
            if not kwargs[key]:
                raise ConfigError(f"empty list at {key}")
            kwargs[key] = tuple(kwargs[key])
    spec = ExperimentSpec(**kwargs)
    if spec.experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {spec.experiment!r}; "
            f"choose from {', '.join(EXPERIMENTS)}")
    if spec.combiner not in ("MR", "RZF"):
        raise ConfigError(f"unknown combiner {spec.combiner!r}")
    for preset in spec.ue_presets:
        if preset not in scenario.UE_PRESETS:
            raise ConfigError(f"unknown UE preset {preset!r} in ue_presets")
    for eps in spec.epsilon_list:
        if not 0.0 < eps < 1.0:
            raise ConfigError(f"epsilon_list entries must be in (0,1): {eps}")
    return spec


def _config_hash(spec):
    blob = json.dumps(dataclasses.asdict(spec), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_atomic(path, text):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path, spec, header, rows):
    lines = [f"# cfoutage config_hash={_config_hash(spec)} "
             f"seed={spec.scenario.seed}"]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _write_atomic(path, "\n".join(lines) + "\n")


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def _model_for(spec, k_u, preset, combiner):
    cfg = dataclasses.replace(spec.scenario, K_u=k_u, ue_preset=preset)
    return receiver.build_scenario_model(cfg, combiner,
                                         n_mc_stats=spec.n_mc_stats)


def run_scenario_dump(spec, out_dir):
    geo = scenario.place_network(
        spec.scenario, scenario.substream(spec.scenario.seed,
                                          receiver.STREAM_BUILD))
    rows = []
    serving = set(int(i) for i in geo.serving_set)
    for i, (x, y) in enumerate(geo.ap_positions):
        role = "serving" if i in serving else "neighbor"
        rows.append(("ap", i, x, y, role))
    for i, (x, y) in enumerate(geo.known_ue_positions):
        cls = "desired" if i == geo.desired_ue_index else "known"
        rows.append(("ue", i, x, y, cls))
    for i, (x, y) in enumerate(geo.unknown_ue_positions):
        rows.append(("ue", len(geo.known_ue_positions) + i, x, y, "unknown"))
    _write_csv(os.path.join(out_dir, "geometry.csv"), spec,
               ("record", "id", "x", "y", "tag"), rows)
    return EXIT_OK


def run_oracle_check(spec, out_dir, alpha=3.0, beta=2.0, weight=1.0,
                     tol=1e-4):
    """Single-component Gil-Pelaez CDF against the incomplete-gamma closed
    form; exit code 4 when the discrepancy exceeds the tolerance."""
    from scipy.special import gammaincc, gammainccinv

    comp = igsum.IgComponent(alpha=alpha, beta=beta, weight=weight)
    inv = igsum.MixtureInversion(igsum.IgMixture(components=(comp,)),
                                 igsum.QuadratureSpec(n_points=spec.n_points))
    qs = np.linspace(0.001, 0.999, 200)
    xs = np.sort(weight * beta / gammainccinv(alpha, qs))
    f_gp = inv.cdf(xs)
    f_oracle = gammaincc(alpha, weight * beta / xs)
    err = np.abs(f_gp - f_oracle)
    rows = list(zip(xs, f_gp, f_oracle, err))
    _write_csv(os.path.join(out_dir, "oracle_check.csv"), spec,
               ("x", "F_gilpelaez", "F_oracle", "abs_err"), rows)
    if float(err.max()) > tol:
        print(f"oracle check FAILED: max |err| = {err.max():.3e} > {tol}",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"oracle check passed: max |err| = {err.max():.3e}")
    return EXIT_OK


def run_diag_covariance(spec, out_dir):
    model = _model_for(spec, spec.scenario.K_u, spec.scenario.ue_preset,
                       spec.combiner)
    drops = rateadapt.collect_drops(model, spec.n_diag_drops, spec.n_mc_drop,
                                    receiver.STREAM_FIT, spec.threads)
    rows = []
    for i, d in enumerate(drops):
        m = d.unknown_cov
        off = float(np.abs(m - np.diag(np.diag(m))).max())
        rows.append((i, d.diag_ratio, float(np.min(np.diag(m).real)), off,
                     d.iui_true,
                     float(d.per_ap_power @ model.decomp.weights_sq)))
    mean_ratio = float(np.mean([d.diag_ratio for d in drops]))
    _write_csv(os.path.join(out_dir, "diag_covariance.csv"), spec,
               ("drop", "ratio", "min_diag", "max_offdiag", "iui_true",
                "iui_diag_approx"), rows)
    print(f"mean off/diag ratio over {len(drops)} drops: {mean_ratio:.4f}")
    return EXIT_OK


def run_sinr_cdf(spec, out_dir):
    """Analytic (inverted-CF) and Monte Carlo SINR CDFs per scenario."""
    rows = []
    proc = spec.procedure_config()
    for k_u in spec.k_u_list:
        for preset in spec.ue_presets:
            for combiner in ("MR", "RZF"):
                model = _model_for(spec, k_u, preset, combiner)
                _, diag = rateadapt.run_procedure(model, 0.05, proc)
                sinrs = rateadapt.drop_sinrs(
                    model, spec.n_validation_drops, spec.n_mc_validation,
                    n_jobs=spec.threads)
                grid_db, analytic, mc = _sinr_cdf_curves(
                    model, diag["mixture"], sinrs, proc.quad)
                rows += [(k_u, preset, combiner, g, a, m)
                         for g, a, m in zip(grid_db, analytic, mc)]
    _write_csv(os.path.join(out_dir, "sinr_cdf.csv"), spec,
               ("k_u", "preset", "combiner", "sinr_db", "cdf_analytic",
                "cdf_montecarlo"), rows)
    return EXIT_OK


def _sinr_cdf_curves(model, mixture, sinrs, quad, n_grid=201):
    """CDF curves on a common SINR grid (dB).

    The zero-unknown-interference SINR upper-bounds every drop, so the grid
    spans [0.8 * min drop, that bound].
    """
    d = model.decomp
    hi = d.sinr(0.0)
    lo = min(float(np.min(sinrs)) * 0.8, hi * 0.5)
    grid = np.linspace(10 * np.log10(lo), 10 * np.log10(hi), n_grid)
    lin = 10.0 ** (grid / 10.0)
    mc = np.array([float(np.mean(sinrs <= t)) for t in lin])
    if mixture is None:
        analytic = (lin >= hi).astype(float)
    else:
        inv = igsum.MixtureInversion(mixture, quad)
        analytic = np.empty_like(lin)
        for i, t in enumerate(lin):
            y = abs(d.DS) ** 2 / t - d.IUSI - d.noise_term
            analytic[i] = 1.0 - inv.cdf(y) if y > 0 else 1.0
    return grid, analytic, mc


def run_outage_curve(spec, out_dir):
    """Achieved outage of proposed policies (per epsilon) and fixed-margin
    baselines (per margin) on shared validation drops."""
    rows = []
    proc = spec.procedure_config()
    for k_u in spec.k_u_list:
        for preset in spec.ue_presets:
            model = _model_for(spec, k_u, preset, spec.combiner)
            sinrs = rateadapt.drop_sinrs(
                model, spec.n_validation_drops, spec.n_mc_validation,
                n_jobs=spec.threads)
            policies = []
            for eps in spec.epsilon_list:
                pol, diag = rateadapt.run_procedure(model, eps, proc)
                policies.append((eps, pol, diag))
            for m_db in spec.margin_db_list:
                pol = rateadapt.baseline_margin_policy(
                    model.decomp, m_db, model.prelog)
                policies.append((m_db, pol, None))
            policy_json = {}
            for param, pol, diag in policies:
                p_hat, (lo, hi) = rateadapt.outage_from_sinrs(pol, sinrs)
                rows.append((k_u, preset, spec.combiner, pol.method, param,
                             p_hat, lo, hi, pol.R))
                if diag is not None:
                    policy_json[f"eps={param}"] = _policy_record(pol, diag)
            _write_atomic(
                os.path.join(out_dir, f"policy_ku{k_u}_{preset}.json"),
                json.dumps(policy_json, indent=2, default=_json_default))
    _write_csv(os.path.join(out_dir, "outage_curve.csv"), spec,
               ("k_u", "preset", "combiner", "method", "epsilon_or_SE",
                "achieved_outage", "ci_lo", "ci_hi", "se"), rows)
    return EXIT_OK


def _policy_record(policy, diag):
    per_ap = diag["per_ap"]
    return {
        "epsilon": policy.epsilon,
        "T": policy.T,
        "R": policy.R,
        "method": policy.method,
        "margin_db": policy.margin_db,
        "DS": [diag["DS"].real, diag["DS"].imag],
        "IUSI": diag["IUSI"],
        "noise_term": diag["noise_term"],
        "mu": per_ap["mu"],
        "v": per_ap["v"],
        "alpha": per_ap["alpha"],
        "beta": per_ap["beta"],
        "weights_sq": per_ap["weights"],
        "degenerate": diag["degenerate"],
        "diag_ratio_mean": diag["diag_ratio_mean"],
    }


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cfoutage",
        description="Cell-free massive MIMO unknown-interference simulator "
                    "and outage-constrained rate adaptation toolkit.")
    parser.add_argument("--config", default=None,
                        help="JSON experiment config (defaults if omitted)")
    parser.add_argument("--experiment", default=None, choices=EXPERIMENTS,
                        help="experiment to run (overrides config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="scenario seed (overrides config)")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes for drop evaluation "
                             "(-1 = all cores)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            spec = parse_config(args.config)
        else:
            spec = ExperimentSpec(scenario=scenario.ScenarioConfig())
        if args.experiment is not None:
            spec = dataclasses.replace(spec, experiment=args.experiment)
        if args.seed is not None:
            spec = dataclasses.replace(
                spec, scenario=dataclasses.replace(spec.scenario,
                                                   seed=args.seed))
        if args.out is not None:
            spec = dataclasses.replace(spec, output_dir=args.out)
        if args.threads is not None:
            spec = dataclasses.replace(spec, threads=args.threads)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = spec.output_dir
    os.makedirs(out_dir, exist_ok=True)
    runner = {
        "sinr-cdf": run_sinr_cdf,
        "outage-curve": run_outage_curve,
        "oracle-check": run_oracle_check,
        "scenario-dump": run_scenario_dump,
        "diag-covariance": run_diag_covariance,
    }[spec.experiment]
    try:
        return runner(spec, out_dir)
    except (KernelConvergenceError, igsum.QuadratureError,
            receiver.NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
