//! The experiment registry. Order here is the listing order.

use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use redei_core::additive::{
    density_bound_check, g_space_dimension, random_differential_system, unbalanced_image_fraction,
    validate_additive_system, ProductSpace, RandomSystemParams,
};
use redei_core::divisor::{
    divisor_trend_table, poisson_order_stat_sim, ramanujan_approx, ramanujan_i, RegularityRange,
    DIVISOR_TREND_CSV_HEADER,
};
use redei_core::matrix_model::{limit_rank_defect_prob, p_cond, p_rsj, rm_gap_check, sample_kernel_dims, QMethod};
use redei_core::modules::{
    aut_count, brute_force_aut_count, cl_weight, module_order, pairing_kernels, partitions_bounded, rank_prefix_prob,
    DEFAULT_TAIL_CUT,
};
use redei_core::redei::{field_records, histogram_from_records, structural_check, SUPPORT_RECORD_CSV_HEADER};
use redei_core::rng::stream_rng;
use redei_core::Modulus;

use crate::{Context, Metric, Result, Table};

pub struct Outcome {
    pub metrics: Vec<Metric>,
    pub table: Option<Table>,
}

pub struct Experiment {
    pub name: &'static str,
    /// What the experiment measures, in one line.
    pub anchor: &'static str,
    /// `None` when the experiment ignores N.
    pub default_n: Option<u64>,
    pub max_n: u64,
    pub tolerances: &'static [(&'static str, f64)],
    pub(crate) run: fn(&Context) -> Result<Outcome>,
}

static REGISTRY: &[Experiment] = &[
    Experiment {
        name: "redei-distribution",
        anchor: "distribution of the (1 - zeta_l)^2-rank defect of cyclic degree-l fields vs the random-matrix limit",
        default_n: Some(1_000_000),
        max_n: 100_000_000,
        tolerances: &[("freq", 0.03)],
        run: redei_distribution,
    },
    Experiment {
        name: "redei-structure",
        anchor: "Redei matrices: zero row sums, all-ones right kernel, nontrivial left kernel, scaling invariance",
        default_n: Some(100_000),
        max_n: 100_000_000,
        tolerances: &[],
        run: redei_structure,
    },
    Experiment {
        name: "matrix-exactness",
        anchor: "P(j | n) for n x (n+1) matrices over F_l: exact row sums, top term, Monte Carlo agreement",
        default_n: None,
        max_n: 0,
        tolerances: &[("sigmas", 3.0)],
        run: matrix_exactness,
    },
    Experiment {
        name: "matrix-gap",
        anchor: "pinned-block rank gap |P(r, r-1, l, j) - Q(r, r-1, l, M, j)| <= 2k l^(2k-r)",
        default_n: None,
        max_n: 0,
        tolerances: &[],
        run: matrix_gap,
    },
    Experiment {
        name: "additive-suite",
        anchor: "l-additive systems: validity, density lower bound delta^(l^|S|), d-image dimension, unbalanced images",
        default_n: None,
        max_n: 0,
        tolerances: &[],
        run: additive_suite,
    },
    Experiment {
        name: "divisor-trends",
        anchor: "prime divisors of squarefree integers: spacing and C_0-regularity trends, Poisson order statistics, Ramanujan integral",
        default_n: Some(10_000_000),
        max_n: 1_000_000_000,
        tolerances: &[("i1", 1e-9)],
        run: divisor_trends,
    },
    Experiment {
        name: "measure-normalization",
        anchor: "Cohen-Lenstra measure on Z_l[zeta_l]-modules: total mass and rank-prefix pushforward",
        default_n: None,
        max_n: 0,
        tolerances: &[("mass", 1e-3), ("prefix", 1e-9)],
        run: measure_normalization,
    },
    Experiment {
        name: "pairing-kernels",
        anchor: "Artin pairing kernels equal pi^k A[pi^(k+1)]; automorphism counts by brute force",
        default_n: None,
        max_n: 0,
        tolerances: &[],
        run: pairing_kernels_exp,
    },
];

pub fn list_experiments() -> &'static [Experiment] {
    REGISTRY
}

pub fn experiment(name: &str) -> Option<&'static Experiment> {
    REGISTRY.iter().find(|e| e.name == name)
}

fn redei_distribution(ctx: &Context) -> Result<Outcome> {
    let records = field_records(ctx.n, ctx.l)?;
    let hist = histogram_from_records(ctx.n, ctx.l, &records);
    let mut metrics: Vec<Metric> = (0..=2)
        .map(|j| {
            Metric::within(
                format!("freq[j={j}]"),
                hist.frequency(j),
                limit_rank_defect_prob(ctx.l, j as u32),
                ctx.tol("freq"),
            )
        })
        .collect();
    metrics.push(Metric::info("fields", hist.total as f64));
    metrics.push(Metric::info("supports", hist.supports as f64));
    metrics.push(Metric::info("supports_with_spread", hist.supports_with_spread as f64));
    let table = Table { header: SUPPORT_RECORD_CSV_HEADER.into(), rows: records.iter().map(|r| r.csv_row()).collect() };
    Ok(Outcome { metrics, table: Some(table) })
}

fn redei_structure(ctx: &Context) -> Result<Outcome> {
    let rep = structural_check(ctx.n, ctx.l)?;
    let counts = [
        ("nonzero_row_sums", rep.nonzero_row_sums),
        ("ones_not_in_right_kernel", rep.ones_not_in_right_kernel),
        ("trivial_left_kernel", rep.trivial_left_kernel),
        ("kernel_dim_mismatch", rep.kernel_dim_mismatch),
        ("scaling_not_invariant", rep.scaling_not_invariant),
    ];
    let mut table = Table::new("check,violations");
    let mut metrics = vec![Metric::info("pairs_checked", rep.pairs_checked as f64)];
    for (name, c) in counts {
        metrics.push(Metric::within(name, c as f64, 0.0, 0.0));
        table.rows.push(format!("{name},{c}"));
    }
    Ok(Outcome { metrics, table: Some(table) })
}

const MC_DRAWS: u64 = 100_000;

fn matrix_exactness(ctx: &Context) -> Result<Outcome> {
    let mut moduli = vec![Modulus::of(3), Modulus::of(5)];
    if !moduli.contains(&ctx.l) {
        moduli.push(ctx.l);
    }
    let mut metrics = Vec::new();
    let mut table = Table::new("l,r,s,j,exact_num,exact_den,float");
    for &l in &moduli {
        let mut sums_ok = true;
        let mut top_ok = true;
        for n in 0..=8usize {
            let mut total = num_rational::BigRational::zero();
            for j in 0..=n {
                let p = p_cond(j, n, l)?;
                table.rows.push(format!(
                    "{},{},{},{},{},{},{}",
                    l.get(),
                    n,
                    n + 1,
                    j,
                    p.numer(),
                    p.denom(),
                    p.to_f64().unwrap_or(f64::NAN)
                ));
                total += &p;
            }
            sums_ok &= total.is_one();
            let top = p_cond(n, n, l)?;
            top_ok &=
                top.numer().is_one() && *top.denom() == num_bigint::BigInt::from(l.get()).pow((n * (n + 1)) as u32);
        }
        metrics.push(Metric::predicate(format!("row_sums_exactly_one[l={}]", l.get()), sums_ok));
        metrics.push(Metric::predicate(format!("top_term_exact[l={}]", l.get()), top_ok));
    }
    // Shapes on both sides of square, one per modulus.
    let cases = [(4usize, 5usize, Modulus::of(3)), (6, 5, Modulus::of(3)), (3, 4, Modulus::of(5)), (5, 6, ctx.l)];
    for (idx, &(r, s, l)) in cases.iter().enumerate() {
        let hist = sample_kernel_dims(r, s, l, ctx.seed.wrapping_add(idx as u64), MC_DRAWS);
        for j in s.saturating_sub(r)..=s.min(s.saturating_sub(r) + 3) {
            let p = p_rsj(r, s, l, j).to_f64().unwrap_or(0.0);
            let freq = *hist.get(&j).unwrap_or(&0) as f64 / MC_DRAWS as f64;
            let sigma = (p * (1.0 - p) / MC_DRAWS as f64).sqrt().max(1.0 / MC_DRAWS as f64);
            metrics.push(Metric::within(
                format!("mc_freq[l={},r={r},s={s},j={j}]", l.get()),
                freq,
                p,
                ctx.tol("sigmas") * sigma,
            ));
        }
    }
    Ok(Outcome { metrics, table: Some(table) })
}

fn matrix_gap(ctx: &Context) -> Result<Outcome> {
    let l = ctx.l;
    let mut runs = vec![(4, 1, QMethod::Exhaustive), (4, 1, QMethod::ColumnSplit), (5, 1, QMethod::ColumnSplit)];
    runs.push((6, 2, QMethod::ColumnSplit));
    runs.push((6, 2, QMethod::Sampled { draws: 20_000, seed: ctx.seed }));
    let mut metrics = Vec::new();
    let mut table = Table::new("l,r,k,method,max_gap,bound,radius,worst_block,worst_j,blocks");
    for (r, k, method) in runs {
        let rep = rm_gap_check(r, k, l, method)?;
        let tag = match method {
            QMethod::Exhaustive => "exhaustive",
            QMethod::ColumnSplit => "column_split",
            QMethod::Sampled { .. } => "sampled",
        };
        metrics.push(Metric::at_most(format!("max_gap[r={r},k={k},{tag}]"), rep.max_gap, rep.bound, rep.radius));
        table.rows.push(format!(
            "{},{r},{k},{tag},{},{},{},{},{},{}",
            l.get(),
            rep.max_gap,
            rep.bound,
            rep.radius,
            rep.worst_block,
            rep.worst_j,
            rep.blocks_checked
        ));
    }
    Ok(Outcome { metrics, table: Some(table) })
}

const RANDOM_SYSTEMS: u64 = 1000;
/// Largest `|X̄_[d]|` among the random systems.
const SYSTEM_CUBE_CAP: usize = 50_000;
/// Largest `|X̄_S|` in the exhaustive d-image check.
const G_SPACE_CUBE_CAP: usize = 300_000;
/// Largest `l^|Z|` among the micro instances.
const MICRO_FUNCTION_CAP: u64 = 1_000_000;

fn random_params(l: Modulus, rng: &mut impl Rng) -> RandomSystemParams {
    let d = rng.gen_range(1..=3usize);
    loop {
        let sizes: Vec<usize> = (0..d).map(|_| rng.gen_range(1..=6)).collect();
        let space = ProductSpace::with_sizes(&sizes).expect("nonempty sizes");
        if space.cube_count((1 << d) - 1, l).is_some_and(|c| c <= SYSTEM_CUBE_CAP) {
            return RandomSystemParams {
                sizes,
                dims: (0..1 << d).map(|_| rng.gen_range(0..=2)).collect(),
                zero_bias: rng.gen_range(0.4..1.0),
            };
        }
    }
}

fn additive_suite(ctx: &Context) -> Result<Outcome> {
    let l = ctx.l;
    let mut table = Table::new("system,d,sizes,valid,density_pass,delta,a");
    let results: Vec<(String, bool, bool)> = (0..RANDOM_SYSTEMS)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(ctx.seed, i);
            let params = random_params(l, &mut rng);
            let sys = random_differential_system(&params, l, &mut rng)?;
            let valid = validate_additive_system(&sys).is_valid();
            let dens = density_bound_check(&sys, None, None)?;
            let sizes = params.sizes.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            let row =
                format!("{i},{},{sizes},{valid},{},{},{}", params.sizes.len(), dens.all_pass(), dens.delta, dens.a);
            Ok((row, valid, dens.all_pass()))
        })
        .collect::<Result<_>>()?;
    let invalid = results.iter().filter(|r| !r.1).count();
    let density_failures = results.iter().filter(|r| !r.2).count();
    table.rows.extend(results.into_iter().map(|r| r.0));

    let mut g_cases = 0u64;
    let mut g_mismatch = 0u64;
    for d in 1..=3usize {
        let mut sizes = vec![1usize; d];
        loop {
            let space = ProductSpace::with_sizes(&sizes)?;
            for mask in 0..1u32 << d {
                if space.cube_count(mask, l).is_some_and(|c| c <= G_SPACE_CUBE_CAP) {
                    g_cases += 1;
                    if !g_space_dimension(&space, mask, l)?.matches() {
                        g_mismatch += 1;
                    }
                }
            }
            let Some(k) = sizes.iter().position(|&n| n < 4) else { break };
            sizes[k] += 1;
            sizes[..k].fill(1);
        }
    }

    let mut micro_cases = 0u64;
    let mut micro_over = 0u64;
    let mut worst_ratio = 0.0f64;
    let mut rng = stream_rng(ctx.seed, RANDOM_SYSTEMS);
    for sizes in [vec![2, 2], vec![2, 3], vec![3, 3], vec![2, 4], vec![3, 4], vec![2, 2, 2], vec![2, 2, 3]] {
        let space = ProductSpace::with_sizes(&sizes)?;
        let n = space.size();
        let full = (1u32 << sizes.len()) - 1;
        let mut sub: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        sub[0] = true;
        for z in [vec![true; n], sub] {
            let points = z.iter().filter(|&&b| b).count() as u32;
            if (l.get() as u64).checked_pow(points).map_or(true, |t| t > MICRO_FUNCTION_CAP) {
                continue;
            }
            for eps in [0.05, 0.2, 0.5] {
                let rep = unbalanced_image_fraction(&space, &z, full, eps, l)?;
                micro_cases += 1;
                if !rep.within_bound() {
                    micro_over += 1;
                }
                worst_ratio = worst_ratio.max(rep.fraction / rep.bound);
            }
        }
    }

    let metrics = vec![
        Metric::info("random_systems", RANDOM_SYSTEMS as f64),
        Metric::within("invalid_systems", invalid as f64, 0.0, 0.0),
        Metric::within("density_bound_failures", density_failures as f64, 0.0, 0.0),
        Metric::info("g_space_cases", g_cases as f64),
        Metric::within("g_space_mismatches", g_mismatch as f64, 0.0, 0.0),
        Metric::info("micro_instances", micro_cases as f64),
        Metric::within("unbalanced_over_bound", micro_over as f64, 0.0, 0.0),
        Metric::info("worst_fraction_over_bound", worst_ratio),
    ];
    Ok(Outcome { metrics, table: Some(table) })
}

const TREND_RS: [usize; 3] = [3, 4, 5];
const TREND_D1S: [f64; 3] = [1e2, 1e3, 1e4];
const TREND_C0S: [f64; 3] = [2.0, 4.0, 8.0];
const TREND_FACTOR: f64 = 10.0;

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn divisor_trends(ctx: &Context) -> Result<Outcome> {
    let mut metrics = Vec::new();
    let mut table = Table::new(format!("{DIVISOR_TREND_CSV_HEADER},range"));
    for (range, tag) in [(RegularityRange::LowerThird, "lower_third"), (RegularityRange::All, "all")] {
        let rows = divisor_trend_table(ctx.n, ctx.l, &TREND_RS, &TREND_D1S, TREND_FACTOR, &TREND_C0S, range)?;
        for &r in &TREND_RS {
            let of_r: Vec<_> = rows.iter().filter(|row| row.r == r).collect();
            // Spacing does not depend on the range; report it once.
            if range == RegularityRange::All {
                let spaced: Vec<f64> = TREND_D1S
                    .iter()
                    .map(|&d1| of_r.iter().find(|row| row.d1 == d1).map_or(0.0, |row| row.frac_not_spaced))
                    .collect();
                metrics
                    .push(Metric::predicate(format!("not_spaced_nonincreasing_in_D1[r={r}]"), non_increasing(&spaced)));
                metrics.push(Metric::info(format!("samples[r={r}]"), of_r.first().map_or(0, |row| row.samples) as f64));
            }
            let regular: Vec<f64> = TREND_C0S
                .iter()
                .map(|&c0| of_r.iter().find(|row| row.c0 == c0).map_or(0.0, |row| row.frac_not_regular))
                .collect();
            metrics.push(Metric::predicate(
                format!("not_regular_nonincreasing_in_C0[r={r},range={tag}]"),
                non_increasing(&regular),
            ));
        }
        table.rows.extend(rows.iter().map(|row| format!("{},{tag}", row.csv_row())));
    }

    let sim = poisson_order_stat_sim(200, 200.0, 20_000, &TREND_C0S, ctx.seed, RegularityRange::All)?;
    let rates = sim.rates();
    for (c0, rate) in TREND_C0S.iter().zip(&rates) {
        metrics.push(Metric::info(format!("poisson_failure_rate[C0={c0}]"), *rate));
    }
    metrics
        .push(Metric::predicate("poisson_failure_rate_decays", non_increasing(&rates) && rates.last() < rates.first()));

    let mut i1_err = 0.0f64;
    let mut trivial_ok = true;
    for k in 0..40 {
        let u = 1.0 + k as f64 * 0.73;
        i1_err = i1_err.max((ramanujan_i(1, u, 1.0 / 256.0)?.value - u.ln()).abs());
        for r in 0..=5 {
            let est = ramanujan_i(r, u, 1.0 / 64.0)?;
            trivial_ok &= est.value <= u.ln().powi(r as i32) + est.error;
        }
    }
    metrics.push(Metric::within("ramanujan_i1_minus_log_max", i1_err, 0.0, ctx.tol("i1")));
    metrics.push(Metric::predicate("ramanujan_below_log_power", trivial_ok));
    for r in 1..=3usize {
        let exact = ramanujan_i(r, 1000.0, 1.0 / 32.0)?.value;
        metrics.push(Metric::info(
            format!("ramanujan_approx_rel_dev[r={r},u=1000]"),
            (ramanujan_approx(r, 1000.0)? - exact).abs() / exact,
        ));
    }
    Ok(Outcome { metrics, table: Some(table) })
}

fn measure_normalization(ctx: &Context) -> Result<Outcome> {
    let l = ctx.l;
    let mass: f64 = partitions_bounded(12, 6)
        .iter()
        .map(|p| cl_weight(p, l, DEFAULT_TAIL_CUT).map(|w| w.value))
        .sum::<redei_core::Result<f64>>()?;
    let prefix: f64 = (0..=10).map(|i| rank_prefix_prob(&[i], l)).sum::<redei_core::Result<f64>>()?;
    let mut metrics = vec![
        Metric::within("cl_mass[parts<=6,size<=12]", mass, 1.0, ctx.tol("mass")),
        Metric::within("rank_prefix_sum[i<=10]", prefix, 1.0, ctx.tol("prefix")),
    ];
    let mut table = Table::new("j,rank_prefix_prob,limit_rank_defect_prob");
    for j in 0..=4u32 {
        let p = rank_prefix_prob(&[j], l)?;
        let limit = limit_rank_defect_prob(l, j);
        metrics.push(Metric::within(format!("rank_prefix_vs_limit[j={j}]"), p, limit, ctx.tol("prefix")));
        table.rows.push(format!("{j},{p},{limit}"));
    }
    Ok(Outcome { metrics, table: Some(table) })
}

/// Largest module order in the brute-force checks.
const BRUTE_ORDER_CAP: u64 = 81;

fn pairing_kernels_exp(ctx: &Context) -> Result<Outcome> {
    let l = ctx.l;
    let small: Vec<_> = partitions_bounded(4, 4)
        .into_iter()
        .filter(|p| module_order(p, l).is_ok_and(|o| o <= BRUTE_ORDER_CAP))
        .collect();
    let mut table = Table::new("partition,k,layer,left_kernel,right_kernel,match");
    let mut pairs = 0u64;
    let mut kernel_failures = 0u64;
    for lambda in small.iter().filter(|p| !p.is_empty()) {
        for k in 1..=lambda.largest() + 1 {
            let pk = pairing_kernels(lambda, k, l)?;
            pairs += 1;
            if !pk.matches() {
                kernel_failures += 1;
            }
            table.rows.push(format!(
                "\"{}\",{k},{},{},{},{}",
                lambda,
                pk.layer.len(),
                pk.left_kernel.len(),
                pk.right_kernel.len(),
                pk.matches()
            ));
        }
    }
    let mut aut_mismatches = 0u64;
    for lambda in &small {
        if aut_count(lambda, l) != num_bigint::BigUint::from(brute_force_aut_count(lambda, l)?) {
            aut_mismatches += 1;
        }
    }
    let metrics = vec![
        Metric::info("kernel_cases", pairs as f64),
        Metric::within("kernel_failures", kernel_failures as f64, 0.0, 0.0),
        Metric::info("aut_cases", small.len() as f64),
        Metric::within("aut_count_mismatches", aut_mismatches as f64, 0.0, 0.0),
    ];
    Ok(Outcome { metrics, table: Some(table) })
}
