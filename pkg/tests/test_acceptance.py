"""Acceptance gate: one test per release criterion, each printing a
pass/fail line.  Run with `pytest tests/test_acceptance.py -v -s`.

Statistical criteria use fixed seeds, so every run of this module is
deterministic.
"""

import math

import numpy as np
from scipy.stats import multivariate_normal

from drem.experiments import (
    run_fig3_study,
    run_probit_coverage_study,
    run_table1_study,
    run_table2_study,
)
from drem.linear_model import (
    Dataset,
    Hyperpriors,
    ModelParams,
    exhaustive_precision_coefficients,
    log_marginal_component,
)
from drem.partitions import (
    canonicalize,
    enumerate_partitions,
    group_by_k,
    log_partition_prior,
    polya_urn_sample,
)
from drem.precision import (
    classify_likelihood_shape,
    dlog_ell,
    importance_sample_coefficients,
    kappa,
    log_ell,
    solve_m_for_kappa,
)
from drem.linear_model import PrecisionCoefficients
from drem.samplers import (
    partition_sweep,
    row_update_probabilities,
    sample_q,
)


def report(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] {status}: {name}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def coeffs(values):
    with np.errstate(divide="ignore"):
        return PrecisionCoefficients(
            log_c=np.log(np.asarray(values, dtype=float)), kind="profile"
        )


def test_partition_prior_normalization():
    worst = 0.0
    for n in range(2, 9):
        parts = enumerate_partitions(n)
        for m in (0.5, 1.0, 5.0):
            total = sum(math.exp(log_partition_prior(p, m)) for p in parts)
            worst = max(worst, abs(total - 1.0))
    report(
        "partition-prior normalization over n in 2..8, m in {0.5, 1, 5}",
        worst < 1e-10,
        f"max deviation {worst:.2e}",
    )


def test_urn_matches_partition_law():
    n, m, draws = 4, 1.0, 1_000_000
    rng = np.random.default_rng(101)
    counts = {}
    for _ in range(draws):
        p = polya_urn_sample(n, m, rng)
        counts[p] = counts.get(p, 0) + 1
    worst = 0.0
    for p in enumerate_partitions(n):
        prob = math.exp(log_partition_prior(p, m))
        freq = counts.get(p, 0) / draws
        se = math.sqrt(prob * (1 - prob) / draws)
        worst = max(worst, abs(freq - prob) / se)
    report(
        "urn draws match the partition law (n=4, m=1, 1e6 draws)",
        worst < 3.0,
        f"worst deviation {worst:.2f} MC SEs",
    )


def test_stirling_group_sizes():
    groups = group_by_k(enumerate_partitions(6))
    sizes = [len(groups[k]) for k in range(1, 7)]
    report(
        "exhaustive enumeration group sizes at n=6",
        sizes == [1, 31, 90, 65, 15, 1],
        f"got {sizes}",
    )


def test_gradient_check():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 13))
        c = coeffs(rng.uniform(0.05, 1.0, size=n))
        m = float(np.exp(rng.uniform(np.log(0.05), np.log(50.0))))
        h = m * 1e-6
        fd = (log_ell(m + h, c) - log_ell(m - h, c)) / (2 * h)
        got = dlog_ell(m, c)
        denom = max(abs(fd), 1e-12)
        worst = max(worst, abs(got - fd) / denom)
    report(
        "likelihood gradient vs centered differences (100 random cases)",
        worst < 1e-6,
        f"worst relative error {worst:.2e}",
    )


def test_shape_catalog():
    # the five published configurations with their published classifications
    catalog = [
        ((0, 0, 0, 0, 0, 1), "boundary_infinity", "infinity boundary"),
        ((1, 0, 0, 0, 0, 0), "boundary_zero", "zero boundary"),
        ((1, 1, 1, 1, 0, 0), "min_then_max", "minimum then maximum"),
        ((1, 1, 0, 0, 1, 1), "unique_min", "unique minimum"),
        ((1, 0, 0, 0, 0, 1), "interior_max", "unique maximum"),
    ]
    failures = []
    for values, want, label in catalog:
        got = classify_likelihood_shape(coeffs(values))
        ok = got.classification == want
        print(
            f"  shape {values}: expected {want} ({label}), got "
            f"{got.classification} [pattern {got.pattern}]"
        )
        if not ok:
            failures.append((values, want, got.classification, got.pattern))
    report(
        "likelihood shape catalog (five published configurations)",
        not failures,
        "; ".join(
            f"{v}: published {w}, derivative scan gives {g} (signs {p})"
            for v, w, g, p in failures
        ),
    )


def test_kappa_anchor():
    k_val = kappa(1.70, 6)
    m_val = solve_m_for_kappa(3.0, 6)
    ok = abs(k_val - 3.0) < 0.01 and abs(m_val - 1.70) < 0.01
    report(
        "prior-cluster anchor kappa(1.70, 6) = 3 and its inversion",
        ok,
        f"kappa={k_val:.4f}, m={m_val:.4f}",
    )


def integer_partitions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in integer_partitions(total - first, parts - 1):
            if first >= rest[0]:
                yield (first,) + rest


def test_count_weight_substitution_identity():
    worst = 0.0
    cases = 0
    for n in range(2, 11):
        for k in range(1, n):
            for sizes in integer_partitions(n - 1, k):
                labels = [j + 1 for j, s in enumerate(sizes) for _ in range(s)]
                labels.append(k + 1)  # the observation being reassigned
                p = canonicalize(labels)
                i = n - 1
                q = np.ones(n)
                for j, s in enumerate(sizes):
                    q[j] = s + 1.0
                q /= q.sum()
                for m in (0.5, 1.0, 3.0):
                    lab_n, probs_n, new_n = row_update_probabilities(i, p, m=m)
                    lab_d, probs_d, new_d = row_update_probabilities(i, p, m=m, q=q)
                    assert list(lab_n) == list(lab_d)
                    worst = max(
                        worst,
                        float(np.max(np.abs(probs_n - probs_d), initial=0.0)),
                        abs(new_n - new_d),
                    )
                    cases += 1
    report(
        "count-weight substitution identity, all size configurations n <= 10",
        worst < 1e-12,
        f"{cases} cases, worst gap {worst:.2e}",
    )


def test_stationarity_and_detailed_balance():
    # long-run partition frequencies at n=4 under the auxiliary-weight kernel
    n, m, sweeps, burn = 4, 1.0, 1_000_000, 5_000
    rng = np.random.default_rng(103)
    part = canonicalize([1, 1, 1, 1])
    parts = enumerate_partitions(n)
    index = {p: j for j, p in enumerate(parts)}
    ones = np.ones(n)
    hits = np.zeros((50, len(parts)))
    per_batch = (sweeps - burn) // 50
    kept = 0
    for t in range(sweeps):
        q = sample_q(part, ones, rng)
        part = partition_sweep(part, q, m, rng)
        if t >= burn and kept < 50 * per_batch:
            hits[kept // per_batch, index[part]] += 1
            kept += 1
    freqs = hits.sum(axis=0) / kept
    batch_means = hits / per_batch
    worst_stat = 0.0
    for p in parts:
        j = index[p]
        prob = math.exp(log_partition_prior(p, m))
        se = batch_means[:, j].std(ddof=1) / math.sqrt(50)
        worst_stat = max(worst_stat, abs(freqs[j] - prob) / max(se, 1e-12))
    ok_stat = worst_stat < 3.0
    print(
        f"  stationarity n=4: worst deviation {worst_stat:.2f} batch-mean SEs"
    )

    # flow symmetry at n=3 with the palindromic row scan (reversible kernel)
    n3, trans = 3, 1_000_000
    rng = np.random.default_rng(104)
    part = canonicalize([1, 1, 1])
    parts3 = enumerate_partitions(n3)
    idx3 = {p: j for j, p in enumerate(parts3)}
    flows = np.zeros((5, 5))
    ones3 = np.ones(n3)
    prev = idx3[part]
    for _ in range(trans):
        q = sample_q(part, ones3, rng)
        part = partition_sweep(part, q, 1.0, rng, row_order="palindrome")
        cur = idx3[part]
        flows[prev, cur] += 1
        prev = cur
    worst_flow = 0.0
    for a in range(5):
        for b in range(a + 1, 5):
            total = flows[a, b] + flows[b, a]
            if total == 0:
                continue
            z = abs(flows[a, b] - flows[b, a]) / math.sqrt(total)
            worst_flow = max(worst_flow, z)
    ok_flow = worst_flow < 3.0
    print(f"  detailed balance n=3: worst flow asymmetry {worst_flow:.2f} SEs")
    report(
        "stationarity (n=4) and detailed balance (n=3) of the auxiliary kernel",
        ok_stat and ok_flow,
        f"stationarity {worst_stat:.2f} SEs, flow {worst_flow:.2f} SEs",
    )


def test_importance_sampling_oracle():
    rng = np.random.default_rng(105)
    X = rng.standard_normal((3, 2))
    y = rng.standard_normal(3)
    d = Dataset(y, X)
    theta = ModelParams(beta=np.array([0.4, -0.2]), sigma2=1.0, tau2=0.8)
    exact = exhaustive_precision_coefficients(d, theta)
    est = importance_sample_coefficients(
        d, Hyperpriors(alpha=1.0), 100_000, rng, fixed_theta=theta
    )
    worst = max(
        abs(est.log_c[k] - exact.log_c[k]) / est.mc_se[k] for k in range(3)
    )
    report(
        "importance-sampled coefficients match exhaustive oracle (n=3, T=1e5)",
        worst < 3.0,
        f"worst deviation {worst:.2f} MC SEs",
    )


def test_prior_sensitivity_study():
    result = run_table2_study(seed=3, replications=100)
    row = next(
        r
        for r in result["rows"]
        if r["prior_mean"] == 2.0 and r["prior_var"] == 10.0
    )
    ok_m = abs(row["m_mean"] - 1.85) <= 3 * 0.06
    ok_k = abs(row["kappa_mean"] - 3.10) <= 3 * 0.03
    report(
        "prior-sensitivity study, (mean 2, variance 10) row",
        ok_m and ok_k,
        f"m {row['m_mean']:.3f} (target 1.85 +/- 0.18), "
        f"kappa {row['kappa_mean']:.3f} (target 3.10 +/- 0.09)",
    )


def test_coefficient_recovery_study():
    result = run_table1_study(seed=0)
    rows = result["rows"]
    details = []
    ok = True
    for row in rows:
        mean1, sd1 = row["beta_mean"][1], row["beta_sd"][1]
        ok = ok and abs(mean1 - 2.0) <= 3 * sd1
        details.append(f"n={row['n']}: beta1 {mean1:.3f} ({sd1:.3f})")
    sds = np.array([r["beta_sd"] for r in rows])
    shrinking = bool(np.all(np.diff(sds, axis=0) < 0))
    ok = ok and shrinking
    report(
        "coefficient recovery study: slope within 3 posterior SDs, SDs shrink",
        ok,
        "; ".join(details) + f"; SDs strictly decreasing: {shrinking}",
    )


def test_sampler_variance_comparison():
    result = run_fig3_study(seed=0)
    wins = 0
    details = []
    for g, curves in sorted(result["curves"].items()):
        d_end = curves["drem_row_gibbs"][-1]
        s_end = curves["stickbreaking"][-1]
        win = d_end <= s_end
        wins += win
        details.append(
            f"groups={g}: auxiliary {d_end:.4f} vs counts {s_end:.4f} "
            f"({100 * (1 - d_end / s_end):+.0f}% change)"
        )
        # both kernels' curves must decay as averaging kicks in
        for tag in curves:
            assert curves[tag][499] < curves[tag][49], (g, tag)
    print("  " + "\n  ".join(details))
    report(
        "sampler comparison: auxiliary kernel at least ties in 3 of 4 layouts",
        wins >= 3,
        f"{wins} of 4 layouts favored the auxiliary kernel",
    )


def test_probit_coverage():
    result = run_probit_coverage_study(seed=0, replications=50)
    per = ", ".join(f"{v:.2f}" for v in result["per_coordinate"])
    report(
        "probit 90% credible-interval coverage over 50 replications",
        result["pooled"] >= 0.80,
        f"pooled {result['pooled']:.3f}, per-coordinate [{per}]",
    )


def test_structured_likelihood_equivalence():
    rng = np.random.default_rng(106)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 13))
        X = rng.standard_normal((n, 2))
        y = rng.standard_normal(n)
        d = Dataset(y, X)
        theta = ModelParams(
            beta=rng.standard_normal(2),
            sigma2=float(rng.uniform(0.3, 3.0)),
            tau2=float(rng.uniform(0.3, 3.0)),
        )
        part = canonicalize(rng.integers(0, max(1, n // 2), size=n).tolist())
        a = part.to_indicator_matrix()
        cov = theta.sigma2 * np.eye(n) + theta.tau2 * (a @ a.T)
        dense = multivariate_normal(mean=X @ theta.beta, cov=cov).logpdf(y)
        worst = max(worst, abs(log_marginal_component(d, theta, part) - dense))
    report(
        "structured likelihood equals dense evaluation (100 cases, n <= 12)",
        worst < 1e-10,
        f"worst gap {worst:.2e}",
    )
