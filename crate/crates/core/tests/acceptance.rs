//! One PASS/FAIL line per acceptance criterion.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use permshield::designs::{DesignKind, NoiseKind};
use permshield::harness::{reproduce, Experiment, ExperimentResult, Scale, Selection};
use permshield::perm::RowSet;
use permshield::verify::{
    check_g_identity, check_oracle_equivalence, check_rank_monotonicity, check_shield_bound,
    check_transferability_gate, CheckReport,
};

const SEED: u64 = 1;
const ALPHA: f64 = 0.05;
const SE_MULT: f64 = 3.0;

const PAIRED_SIZE_LO: f64 = 0.030;
const PAIRED_SIZE_HI: f64 = 0.065;
const PAIRED_UNRESTRICTED_MAX: f64 = 0.002;
const TABLE1_BUDGET: Duration = Duration::from_secs(20 * 60);

const GAUSSIAN_SIZE_LO: f64 = 0.005;
const GAUSSIAN_SIZE_HI: f64 = 0.035;
const GAUSSIAN_GAP_MAX: f64 = 0.01;

const FIG1_UNRESTRICTED_POWER_MAX: f64 = 0.05;
const FIG1_SELECTED_POWER_MIN: f64 = 0.8;

const RECOVERY_MIN: usize = 6;

const ORACLE_INSTANCES: usize = 20;
const ORACLE_DRAWS: usize = 2000;
const IDENTITY_TUPLES: usize = 1000;
const TRANSFER_TUPLES: usize = 500;

struct Tally {
    failed: usize,
}

impl Tally {
    fn report(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }

    fn check(&mut self, id: usize, name: &str, rep: &CheckReport) {
        let mut detail = format!("{} cases, {} violations", rep.cases, rep.violations);
        if let Some(first) = rep.details.first() {
            detail.push_str(&format!("; first: {first}"));
        }
        self.report(id, name, rep.passed(), detail);
    }
}

fn find(
    results: &[ExperimentResult],
    design: DesignKind,
    noise: NoiseKind,
    sel: Selection,
) -> &ExperimentResult {
    results
        .iter()
        .find(|r| {
            r.config.design.kind == design && r.config.noise == noise && r.config.selection == sel
        })
        .expect("cell present")
}

fn target_rows(n: usize, p: usize) -> RowSet {
    RowSet::from_one_based(n, &(2..=p + 2).collect::<Vec<_>>()).unwrap()
}

fn se(rate: f64, draws: usize) -> f64 {
    (rate * (1.0 - rate) / draws as f64).sqrt()
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn main() {
    let mut t = Tally { failed: 0 };

    let start = Instant::now();
    let table1 = reproduce(Experiment::Table1, Scale::Desk, SEED, None).expect("table1 runs");
    let table1_time = start.elapsed();
    let res = &table1.results;

    let sel = find(
        res,
        DesignKind::Paired,
        NoiseKind::Gaussian,
        Selection::RowSelected,
    );
    let unr = find(
        res,
        DesignKind::Paired,
        NoiseKind::Gaussian,
        Selection::Unrestricted,
    );
    let (ms, mu) = (sel.summary.median_rejection, unr.summary.median_rejection);
    t.report(
        1,
        "paired design size",
        (PAIRED_SIZE_LO..=PAIRED_SIZE_HI).contains(&ms) && mu <= PAIRED_UNRESTRICTED_MAX && table1_time <= TABLE1_BUDGET,
        format!(
            "row-selected median {ms:.4} in [{PAIRED_SIZE_LO}, {PAIRED_SIZE_HI}], unrestricted median {mu:.4} <= {PAIRED_UNRESTRICTED_MAX}, table run {:.0}s on {} threads",
            table1_time.as_secs_f64(),
            rayon::current_num_threads()
        ),
    );

    let gs = find(
        res,
        DesignKind::Gaussian,
        NoiseKind::Gaussian,
        Selection::RowSelected,
    )
    .summary
    .median_rejection;
    let gu = find(
        res,
        DesignKind::Gaussian,
        NoiseKind::Gaussian,
        Selection::Unrestricted,
    )
    .summary
    .median_rejection;
    let band = GAUSSIAN_SIZE_LO..=GAUSSIAN_SIZE_HI;
    t.report(
        2,
        "gaussian design conservativeness",
        band.contains(&gs) && band.contains(&gu) && (gs - gu).abs() <= GAUSSIAN_GAP_MAX,
        format!(
            "row-selected {gs:.4}, unrestricted {gu:.4}, gap {:.4}",
            (gs - gu).abs()
        ),
    );

    let start = Instant::now();
    let fig1 = reproduce(Experiment::Fig1, Scale::Desk, SEED, None).expect("fig1 runs");
    let fig1_time = start.elapsed();
    let curve = |s: Selection, f: fn(&permshield::harness::SweepRow) -> f64| -> Vec<f64> {
        fig1.sweep
            .iter()
            .filter(|r| r.selection == s)
            .map(f)
            .collect()
    };
    let coll = curve(Selection::Unrestricted, |r| r.collinearity);
    let pow_u = curve(Selection::Unrestricted, |r| r.power);
    let pow_s = curve(Selection::RowSelected, |r| r.power);
    let neg: Vec<f64> = pow_u.iter().map(|v| -v).collect();
    t.report(
        3,
        "collinearity sweep",
        strictly_increasing(&coll)
            && strictly_increasing(&neg)
            && pow_u.last().is_some_and(|&v| v <= FIG1_UNRESTRICTED_POWER_MAX)
            && pow_s.iter().all(|&v| v >= FIG1_SELECTED_POWER_MIN),
        format!(
            "p = 5, 10, 15: unrestricted collinearity {coll:?}, unrestricted power {pow_u:?}, row-selected power {pow_s:?} ({:.0}s)",
            fig1_time.as_secs_f64()
        ),
    );

    let target = target_rows(100, 15);
    let recovered = sel
        .per_replicate
        .iter()
        .filter(|r| r.selected_rows.as_ref() == Some(&target))
        .count();
    let sizes: Vec<usize> = sel
        .per_replicate
        .iter()
        .map(|r| r.selected_rows.as_ref().map_or(0, RowSet::len))
        .collect();
    t.report(
        4,
        "target row-set recovery",
        recovered >= RECOVERY_MIN,
        format!(
            "{recovered} of {} runs select {target}; selected sizes {sizes:?}",
            sel.per_replicate.len()
        ),
    );

    let mut worst = (0.0f64, String::new());
    let mut violations = 0;
    let mut regime_reps = 0;
    let mut regime_violations = 0;
    let mut failed_reps = 0;
    for r in res {
        let draws = r.config.n_noise_draws;
        let bound = 2.0 * ALPHA + SE_MULT * se(2.0 * ALPHA, draws);
        let exact_bound = ALPHA + SE_MULT * se(ALPHA, draws);
        for rep in &r.per_replicate {
            if rep.failed() {
                failed_reps += 1;
                continue;
            }
            if rep.rejection_rate > bound {
                violations += 1;
            }
            if rep.rejection_rate > worst.0 {
                worst = (
                    rep.rejection_rate,
                    format!(
                        "{} {} replicate {}",
                        r.config.id(),
                        r.config.noise.name(),
                        rep.replicate
                    ),
                );
            }
            let in_regime = r.config.design.kind == DesignKind::Paired
                && r.config.selection == Selection::RowSelected
                && rep.selected_rows.as_ref() == Some(&target)
                && rep.all_perms_fix_z;
            if in_regime {
                regime_reps += 1;
                if rep.rejection_rate > exact_bound {
                    regime_violations += 1;
                }
            }
        }
    }
    t.report(
        5,
        "worst-case validity",
        violations == 0 && failed_reps == 0 && regime_reps > 0 && regime_violations == 0,
        format!(
            "{violations} replicates above 2α + 3SE (max {:.4} at {}), {failed_reps} failed replicates; exact-level regime: {regime_reps} replicates, {regime_violations} above α + 3SE",
            worst.0, worst.1
        ),
    );

    t.check(
        6,
        "oracle equivalence",
        &check_oracle_equivalence(ORACLE_INSTANCES, ORACLE_DRAWS, SEED).unwrap(),
    );
    t.check(
        7,
        "rank monotonicity and zero quantile",
        &check_rank_monotonicity(SEED).unwrap(),
    );
    t.check(8, "single-row shield bound", &check_shield_bound().unwrap());
    t.check(
        9,
        "g identity",
        &check_g_identity(IDENTITY_TUPLES, SEED).unwrap(),
    );
    t.check(
        10,
        "transferability gate",
        &check_transferability_gate(TRANSFER_TUPLES, SEED).unwrap(),
    );

    let mut outputs = Vec::new();
    let mut ok = true;
    for threads in ["1", "2", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let mut files = Vec::new();
        for exp in ["table1", "fig1"] {
            let status = Command::new(env!("CARGO_BIN_EXE_permshield"))
                .args([
                    "--threads",
                    threads,
                    "reproduce",
                    "--experiment",
                    exp,
                    "--scale",
                    "smoke",
                    "--seed",
                    "7",
                ])
                .arg("--out-dir")
                .arg(dir.path())
                .output()
                .unwrap()
                .status;
            ok &= status.success();
            files.push(fs::read(dir.path().join(format!("{exp}.csv"))).unwrap_or_default());
        }
        outputs.push(files);
    }
    let identical =
        outputs.windows(2).all(|w| w[0] == w[1]) && outputs[0].iter().all(|f| !f.is_empty());
    t.report(
        11,
        "determinism",
        ok && identical,
        format!(
            "table1 and fig1 CSVs at 1, 2 and 4 threads {}",
            if identical {
                "byte-identical"
            } else {
                "differ"
            }
        ),
    );

    println!("{} of 11 criteria failed", t.failed);
    if t.failed > 0 {
        std::process::exit(1);
    }
}
