"""Acceptance criteria at their stated tolerances.

Each test prints one ``CRITERION n: PASS|FAIL`` line (also collected in the
terminal summary).  Criterion 9 fails on the dilation map: the minimal rank
grows with the domain, so it is not constant in time to within one.  That
test is a strict xfail; ``test_criterion_09_scope`` pins the failure down to
the time-spread check alone.
"""
import filecmp
import os

import numpy as np
import pytest

from movns import cli
from movns import diagnostics as D
from movns.assembly import assemble_series
from movns.basis import FAMILIES, TimeGrid, build_basis_series
from movns.config import parse_config
from movns.quadrature import gauss_legendre_square, recommended_order

from conftest import BUILTIN

MAPS = sorted(BUILTIN)


def config(kind="dilation", **extra):
    """Desk-scale run: vortex initial data, steady forcing on raw element 1
    and additive noise on raw element 2."""
    base = dict(map_kind=kind, m=4, ic_kind="vortex", force_kind="mode", force_mode=1,
                noise_kind="mode", noise_mode=2)
    base.update(extra)
    text = f"map.kind = {kind}\nsolver.T = {base.pop('T', 1.0)!r}\n" \
           f"solver.dt = {base.pop('dt', 1e-3)!r}\n"
    return parse_config(text).replace(**base)


def _checks(rep, *names):
    return [c for c in rep.checks if c.name in names]


def test_criterion_01_transformation_calculus(criterion):
    worst = 0.0
    ok = True
    for kind in MAPS:
        rep = D.geometry_suite(BUILTIN[kind](), samples=1000)
        for c in _checks(rep, "inverse identities", "metric identities"):
            assert c.threshold == 1e-10
            worst = max(worst, c.value)
            ok &= c.passed
    criterion(1, ok, f"max identity residual {worst:.2e} <= 1e-10 on {len(MAPS)} maps, "
                     f"1000 samples")
    assert ok


def test_criterion_02_divergence_both_directions(criterion):
    orders = {}
    for kind in MAPS:
        rep = D.geometry_suite(BUILTIN[kind](), samples=200)
        orders[kind] = [c.value for c in rep.checks if c.name.startswith("divergence order")]
    lo = min(min(v) for v in orders.values())
    ok = all(len(v) == 2 and min(v) >= 1.8 for v in orders.values())
    criterion(2, ok, f"min divergence order {lo:.3f} >= 1.8, both directions, "
                     f"fd_step in {D.FD_STEPS}")
    assert ok


def test_criterion_03_basis(criterion):
    grid = TimeGrid(1.0, 50)
    gram = 0.0
    for kind in MAPS:
        for fam in FAMILIES:
            for m in (4, 32):
                quad = gauss_legendre_square(recommended_order(m))
                gram = max(gram, build_basis_series(BUILTIN[kind](), m, grid, quad,
                                                    family=fam).gram_deviation())
    orders = {}
    for kind in MAPS:
        rep = D.basis_suite(BUILTIN[kind](), m=4)
        (c,) = _checks(rep, "antisymmetry order", "antisymmetry residual (exact)")
        orders[kind] = (c.value if c.name == "antisymmetry order" else np.inf, c.passed)
    ok = gram <= 1e-10 and all(p for _, p in orders.values())
    finite = [v for v, _ in orders.values() if np.isfinite(v)]
    criterion(3, ok, f"Gram deviation {gram:.2e} <= 1e-10 (m = 4, 32; every node); "
                     f"antisymmetry order min {min(finite):.3f} >= 1.8 "
                     f"(fixed-shape maps exact)")
    assert ok


def test_criterion_04_assembly_oracle(criterion):
    vals = {}
    for fam in FAMILIES:
        rep = D.assembly_suite(BUILTIN["dilation"](), m=4, family=fam, trials=200)
        for c in rep.checks:
            if c.name.startswith(("fixed-domain oracle", "physical vs reference")):
                vals[(fam, c.name)] = c
    oracle = max(c.value for k, c in vals.items() if "oracle" in k[1])
    frame = max(c.value for k, c in vals.items() if "frame" in k[1])
    ok = len(vals) == 12 and all(c.passed for c in vals.values())
    criterion(4, ok, f"oracle {oracle:.2e} <= 1e-10 (both families); dilation frame "
                     f"consistency {frame:.2e} <= 1e-8")
    assert ok


def test_criterion_05_convective_neutrality(criterion):
    worst, nodes = 0.0, 0
    for kind in MAPS:
        dmap = BUILTIN[kind]()
        for fam in FAMILIES:
            quad = gauss_legendre_square(recommended_order(8))
            series = build_basis_series(dmap, 8, TimeGrid(1.0, 20), quad, family=fam)
            ts = assemble_series(dmap, series)
            worst = max(worst, D.energy_neutrality(ts, trials=1000))
            nodes += len(ts.s)
    ok = worst <= 1e-8
    criterion(5, ok, f"max |a(g,g,g)| / |g|^3 = {worst:.2e} <= 1e-8 over 1000 g, "
                     f"{len(MAPS)} maps, {nodes} nodes")
    assert ok


def test_criterion_06_energy_identity(criterion):
    orders, decay = {}, 0.0
    ok = True
    for kind in MAPS:
        cfg = config(kind, family="sinprod")
        rep = D.energy_budget(cfg, seeds=cfg.seeds(200))
        orders[kind] = rep.metrics["order_abs_mean"]
        dec = D.energy_decay(cfg, slack=1e-12)
        decay = max(decay, dec.checks[0].value)
        ok &= rep.passed and dec.passed
    criterion(6, ok, f"energy residual order min {min(orders.values()):.3f} >= 0.9 "
                     f"(200 seeds, all maps); largest deterministic energy increase "
                     f"{decay:.2e} <= 1e-12")
    assert ok


@pytest.mark.parametrize("family", FAMILIES)
def test_criterion_07_uniform_bound(criterion, family):
    cfg = config("dilation", T=0.5, dt=5e-4, family=family)
    rep = D.uniform_bound_mc(cfg, m_list=(4, 8, 16, 32), n_paths=200, factor=2.0)
    ratio = rep.checks[0].value
    est = ", ".join(f"{e:.3f}" for e in rep.metrics["estimate"])
    criterion(7, rep.passed, f"[{family}] max/min over m in {{4,8,16,32}} = {ratio:.4f} "
                             f"<= 2 (estimates {est}; 200 paths)")
    assert rep.passed


@pytest.mark.parametrize("family, m, amplitude", [("sin2", 4, 1.0), ("sinprod", 8, 100.0)])
def test_criterion_08_pathwise_uniqueness(criterion, family, m, amplitude):
    # large amplitude makes the convective coupling strong enough for a
    # positive fitted Gronwall constant
    cfg = config("dilation", T=0.5, dt=5e-4, m=m, family=family, ic_amplitude=amplitude,
                 noise_amplitude=amplitude, delta=1e-6)
    prob = D.build_problem(cfg)
    C_hat, C_fit = D.calibrate_gronwall(cfg, problem=prob)
    worst, ok = 0.0, True
    for seed in range(5):
        rep = D.uniqueness_gap(cfg, seed=seed, C_hat=C_hat, problem=prob)
        bitwise, env = rep.checks[0], rep.checks[1]
        worst = max(worst, env.value)
        ok &= bitwise.passed and env.passed
    criterion(8, ok, f"[{family}, m={m}] delta=0 twins bitwise; gap/envelope max "
                     f"{worst:.4f} <= 1 (C_hat {C_hat:.3g}, 5 seeds)")
    assert ok


def _finite_rank(kind):
    return D.finite_rank_inequality(BUILTIN[kind](), np.linspace(0, 1, 11),
                                    eps_list=(0.1, 0.01), m_max=32, trials=1000)


@pytest.fixture(scope="module")
def finite_rank_reports():
    return {kind: _finite_rank(kind) for kind in MAPS}


@pytest.mark.xfail(strict=True, reason="dilation: N(0.01, t) grows from 1 to 6 as the "
                                        "domain doubles; not constant to within one")
def test_criterion_09_finite_rank(criterion, finite_rank_reports):
    bad = {k: [c.name for c in r.failed_checks] for k, r in finite_rank_reports.items()
           if not r.passed}
    ranks = {k: r.metrics["N(eps=0.01)"] for k, r in finite_rank_reports.items()}
    detail = "; ".join(f"{k}: {v}" for k, v in bad.items()) or "all maps"
    criterion(9, not bad, f"N(0.01) per map {ranks}; failing: {detail}")
    assert not bad


def test_criterion_09_scope(finite_rank_reports):
    """Everything but the time-spread check on the dilation map holds."""
    for kind, rep in finite_rank_reports.items():
        failed = {c.name for c in rep.failed_checks}
        if kind == "dilation":
            assert failed == {"N(eps=0.01) spread over t"}
            assert rep.metrics["N(eps=0.01, t)"][-1] > rep.metrics["N(eps=0.01, t)"][0]
        else:
            assert not failed, rep.to_text()
        assert rep.metrics["N(eps=0.01)"] >= rep.metrics["N(eps=0.1)"]
        assert rep.metrics["worst_trial_ratio"] <= 1 + 1e-12


def test_criterion_10_scheme(criterion):
    cfg = config("dilation", T=1.0, dt=1e-3)
    rate = D.strong_rate(cfg, dt_list=(4e-3, 2e-3, 1e-3, 5e-4), seeds=cfg.seeds(200))
    cauchy = D.galerkin_cauchy(config("dilation", T=0.5, dt=5e-4, family="sinprod"),
                               m_list=(4, 8, 16), seeds=range(1000, 1100))
    vals = ", ".join(f"{v:.3e}" for v in cauchy.metrics["E_int_diff_sq"])
    ok = rate.passed and cauchy.passed
    criterion(10, ok, f"strong order {rate.metrics['fitted_order']:.3f} >= 0.7; "
                      f"Galerkin differences m=4,8,16: {vals} strictly decreasing")
    assert ok


def _tree(d):
    return sorted(f for f in os.listdir(d) if f != "manifest.txt")


def test_criterion_11_reproducibility(criterion, tmp_path):
    cfgs = {
        "simulate": "map.kind = wavy_shear\nbasis.m = 6\nbasis.family = sinprod\n"
                    "solver.T = 0.3\ngrid.n_time = 300\nic.kind = vortex\n"
                    "noise.kind = mode\nnoise.mode = 2\noutput.field_count = 3\n",
        "verify": "map.kind = dilation\nbasis.m = 4\ndiag.trials = 200\n",
        "montecarlo": "map.kind = rotation\nsolver.T = 0.2\ngrid.n_time = 200\n"
                      "ic.kind = vortex\nnoise.kind = mode\ndiag.m_list = 2, 4\n"
                      "diag.n_paths = 100\n",
    }
    same = True
    for sub, text in cfgs.items():
        path = tmp_path / f"{sub}.cfg"
        path.write_text(text)
        for seed in (0, 17):
            dirs = [tmp_path / f"{sub}_{seed}_{k}" for k in "ab"]
            for d in dirs:
                assert cli.main([sub, "--config", str(path), "--out", str(d),
                                 "--seed", str(seed)]) == cli.EXIT_OK
            files = _tree(dirs[0])
            _, mismatch, errors = filecmp.cmpfiles(*dirs, files, shallow=False)
            same &= not mismatch and not errors and files == _tree(dirs[1])
            manifests = [[ln for ln in (d / "manifest.txt").read_text().splitlines()
                          if not ln.startswith(("timestamp", "output.dir"))] for d in dirs]
            same &= manifests[0] == manifests[1]
    criterion(11, same, "simulate / verify / montecarlo reruns byte-identical "
                        "(manifest differs only in timestamp and output dir)")
    assert same
