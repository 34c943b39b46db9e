//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use polyflow_core::assumptions::{validate_assumptions, SampleSpec};
use polyflow_core::closure::{closure_compare, single_time_identity};
use polyflow_core::init::{modal_state, random_state, truncate_degree, ModalSpec};
use polyflow_core::state::{energy_e, energy_eta};
use polyflow_core::stepper::{step_picard, StiffSolver};
use polyflow_core::*;

/// `int D dt` of the decay run, frozen from the first accepted run.
const DECAY_DISSIPATION_BASELINE: f64 = 3.5721804840e-4;
/// Relative tolerance on a rise between successive Picard ratios. The
/// ratios sit at the linear contraction factor and wobble by O(eps^2)
/// (about 3e-6 at eps = 1e-3).
const RATIO_SLACK: f64 = 1e-5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

#[derive(Default)]
struct Suite {
    lines: Vec<(String, bool)>,
    /// `(run, max per-step mass drift)` of every trajectory.
    drifts: Vec<(String, f64)>,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce(&mut Suite) -> Outcome) {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(|| f(self)));
        let secs = start.elapsed().as_secs_f64();
        let o = res.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag}  {name:<28} {:>7.2}s  {}", secs, o.detail);
        self.lines.push((name.to_string(), o.pass));
    }

    fn simulate(&mut self, label: &str, model: &Model, cfg: &StepConfig, s0: &FlowState) -> TrajectoryRecord {
        let rec = simulate(model, cfg, s0).expect("valid run");
        self.drifts.push((label.to_string(), rec.max_mass_drift));
        rec
    }
}

fn model(dim: usize, n: usize, n_q: usize) -> Model {
    let grid = TorusGrid::new(dim, n, 2.0 * PI).unwrap();
    let basis = QBasis::build(&Potential::hookean(1.0, 1.0, dim).unwrap(), n_q).unwrap();
    Model::new(ModelParams::default(), basis, grid).unwrap()
}

/// 2-D shear wave `u_1 = eps cos y` with a `q_1 q_2` polymer mode.
fn shear_case(eps: f64) -> (Model, FlowState) {
    let m = model(2, 16, 4);
    let q_mode = m.basis.indices().iter().position(|i| i == &vec![1, 1]).unwrap();
    let spec = ModalSpec { amplitude: eps, mode: vec![0, 1], q_mode, weights: [0.0, 1.0, 1.0] };
    let s = modal_state(&m.grid, &m.basis, &spec).unwrap();
    (m, s)
}

/// One-dimensional compressible mode used for the Picard runs.
fn picard_case(eps: f64) -> (Model, FlowState) {
    let m = model(1, 32, 6);
    let spec = ModalSpec { amplitude: eps, mode: vec![2], q_mode: 2, weights: [0.1, 1.0, 1.0] };
    let s = modal_state(&m.grid, &m.basis, &spec).unwrap();
    (m, s)
}

fn equilibrium(suite: &mut Suite) -> Outcome {
    let m = model(1, 64, 8);
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    let mut pass = true;
    for scheme in [Scheme::Imex, Scheme::Imex2, Scheme::Picard] {
        let start = Instant::now();
        let cfg = StepConfig { dt: 0.01, t_end: 1.0, scheme, ..Default::default() };
        let rec = suite.simulate(&format!("equilibrium-{scheme:?}"), &m, &cfg, &m.zero_state());
        let secs = start.elapsed().as_secs_f64();
        let dev = rec
            .reports
            .iter()
            .flat_map(|r| r.fluctuation_fields())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(dev);
        pass &= rec.completed() && rec.reports.len() == 101 && rec.final_state.is_zero() && dev <= 1e-12 && secs < 5.0;
        details.push(format!("{scheme:?} {secs:.2}s"));
    }
    outcome(pass, format!("100 steps, max |field| = {worst:.1e} ({})", details.join(", ")))
}

fn poincare(_: &mut Suite) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for dim_q in 1..=3 {
        let b = QBasis::build(&Potential::hookean(1.0, 1.0, dim_q).unwrap(), 10).unwrap();
        let c = b.poincare_constant().unwrap();
        let mut degrees: Vec<f64> = (0..b.len()).map(|k| b.degree(k) as f64).collect();
        degrees.sort_by(f64::total_cmp);
        let ev = b.spectrum();
        let err = ev.iter().zip(&degrees).take(5).fold(0.0f64, |a, (e, d)| a.max((e - d).abs()));
        pass &= (c - 1.0).abs() <= 1e-6 && err <= 1e-6;
        let low: Vec<String> = ev.iter().take(5).map(|v| format!("{v:.6}")).collect();
        details.push(format!("dim_q {dim_q}: C_P = {c:.9}, lowest [{}]", low.join(" ")));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(pass && secs < 1.0, details.join("; "))
}

fn cancellation(_: &mut Suite) -> Outcome {
    let start = Instant::now();
    let m = model(1, 64, 8);
    let mut worst = 0.0f64;
    let mut pass = true;
    for seed in 0..20 {
        let s = random_state(&m.grid, &m.basis, 0.5, 1000 + seed, true);
        for order in 0..=3 {
            let c = m.cancellation_residual(&s, order).unwrap();
            pass &= !c.degenerate && c.residual.abs() < 1e-8;
            worst = worst.max(c.residual.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(pass && secs < 30.0, format!("20 states x orders 0..3, max normalized residual {worst:.2e}"))
}

fn audit(suite: &mut Suite) -> Outcome {
    let (m, s0) = shear_case(1e-3);
    let mut pass = true;
    let mut details = Vec::new();
    for (scheme, target, tol) in [(Scheme::Imex, 2.0, 0.3), (Scheme::Imex2, 4.0, 0.6)] {
        let start = Instant::now();
        let mut integrals = Vec::new();
        for dt in [0.02, 0.01] {
            let cfg = StepConfig { dt, t_end: 1.0, scheme, ..Default::default() };
            let rec = suite.simulate(&format!("audit-{scheme:?}-{dt}"), &m, &cfg, &s0);
            pass &= rec.completed();
            integrals.push(rec.audit_integral);
        }
        let ratio = integrals[0] / integrals[1];
        pass &= (ratio - target).abs() <= tol && start.elapsed().as_secs_f64() < 120.0;
        details.push(format!(
            "{scheme:?}: {:.3e} -> {:.3e}, ratio {ratio:.3} (order {:.2})",
            integrals[0],
            integrals[1],
            ratio.log2()
        ));
    }
    outcome(pass, details.join("; "))
}

fn decay(suite: &mut Suite) -> Outcome {
    let (m, s0) = shear_case(1e-3);
    let cfg = StepConfig { dt: 0.01, t_end: 5.0, scheme: Scheme::Imex, ..Default::default() };
    let rec = suite.simulate("decay", &m, &cfg, &s0);
    let dint = rec.dissipation_integral;
    let baseline_ok = ((dint - DECAY_DISSIPATION_BASELINE) / DECAY_DISSIPATION_BASELINE).abs() < 1e-6;
    let pass = rec.completed()
        && rec.monotonicity_violations == 0
        && rec.max_energy_ratio <= 1.0 + 1e-3
        && dint.is_finite()
        && baseline_ok;
    let e0 = rec.reports[0].e;
    let e_end = rec.reports.last().unwrap().e;
    outcome(
        pass,
        format!(
            "T = 5: max E/E0 = {:.6}, violations {}, E(T)/E(0) = {:.3e}, int D dt = {dint:.10e}",
            rec.max_energy_ratio,
            rec.monotonicity_violations,
            e_end / e0
        ),
    )
}

fn picard(suite: &mut Suite) -> Outcome {
    let (m, s0) = picard_case(1e-3);
    let cfg = StepConfig { dt: 2.0, t_end: 6.0, scheme: Scheme::Picard, picard_tol: 1e-10, ..Default::default() };
    let rec = suite.simulate("picard-small", &m, &cfg, &s0);
    let mut pass = rec.completed() && rec.unconverged_steps == 0 && rec.picard.len() == 3;
    let mut max_ratio = 0.0f64;
    let mut worst_rise = f64::NEG_INFINITY;
    for tr in &rec.picard {
        pass &= tr.converged && !tr.ratios.is_empty() && tr.ratios.iter().all(|&r| r < 1.0);
        max_ratio = tr.ratios.iter().fold(max_ratio, |a, &r| a.max(r));
        for w in tr.ratios[1.min(tr.ratios.len())..].windows(2) {
            let rise = (w[1] - w[0]) / w[0];
            worst_rise = worst_rise.max(rise);
            pass &= rise <= RATIO_SLACK;
        }
    }
    let its: Vec<usize> = rec.picard.iter().map(|t| t.iterations).collect();
    let solver = StiffSolver::new(&m, 2.0).unwrap();
    let mut tripped = Vec::new();
    for eps in [1.0, 2.0, 4.0] {
        let (_, big) = picard_case(eps);
        match step_picard(&m, &big, 2.0, 1e-10, 50, &solver) {
            Err(Error::NonContraction { .. }) => tripped.push(format!("{eps}: tripped")),
            Err(e) => {
                pass = false;
                tripped.push(format!("{eps}: other error {e}"));
            }
            Ok(_) => {
                pass = false;
                tripped.push(format!("{eps}: accepted"));
            }
        }
    }
    outcome(
        pass,
        format!(
            "eps 1e-3: iterations {its:?}, max ratio {max_ratio:.4}, largest relative rise after iterate 2 {worst_rise:.1e}; guard [{}]",
            tripped.join(", ")
        ),
    )
}

fn closure(_: &mut Suite) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (dim, n_q) in [(1, 4), (2, 4), (2, 6)] {
        let m = model(dim, 16, n_q);
        let mut s = random_state(&m.grid, &m.basis, 0.05, 77, false);
        truncate_degree(&mut s, &m.basis, 2);
        let mut worst_id = 0.0f64;
        for seed in 0..5 {
            let mut t = random_state(&m.grid, &m.basis, 0.05, 500 + seed, false);
            truncate_degree(&mut t, &m.basis, 2);
            worst_id = worst_id.max(single_time_identity(&m, &t).unwrap());
        }
        let mut dev = 0.0f64;
        for order in [1, 2] {
            let rep = closure_compare(&m, &s, 0.01, 1.0, order).unwrap();
            dev = dev.max(rep.max_deviation);
        }
        pass &= dev < 1e-6 && worst_id < 1e-9;
        details.push(format!("dim {dim} N_q {n_q}: deviation {dev:.2e}, identity {worst_id:.2e}"));
    }
    outcome(pass, details.join("; "))
}

fn validator(_: &mut Suite) -> Outcome {
    let hook = Potential::hookean(1.0, 1.0, 3).unwrap();
    let h = validate_assumptions(&hook, &SampleSpec::default_for(&hook));
    let weak = Potential::fene_unchecked(0.5, 1.0).unwrap();
    let w = validate_assumptions(&weak, &SampleSpec::default_for(&weak));
    let fene = Potential::fene(2.0, 1.0).unwrap();
    let f = validate_assumptions(&fene, &SampleSpec::default_for(&fene));
    let weak_fails = w.check("grad-moment").is_some_and(|c| !c.passed);
    let derivs: Vec<bool> = (1..=3)
        .map(|k| f.check(&format!("weighted-stretch-k{k}")).is_some_and(|c| c.passed))
        .collect();
    let pass = h.passed() && weak_fails && derivs.iter().all(|&b| b);
    outcome(
        pass,
        format!(
            "hookean passed = {}, fene k=0.5 grad-moment failed = {weak_fails}, fene k=2 weighted-stretch k1..3 = {derivs:?}",
            h.passed()
        ),
    )
}

fn eta_equivalence(_: &mut Suite) -> Outcome {
    let m = model(1, 32, 6);
    let mut pass = true;
    let mut details = Vec::new();
    for eta in [0.5, 0.1, 0.01] {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for seed in 0..100u64 {
            let amp = 1e-3 * (1.0 + seed as f64);
            let s = random_state(&m.grid, &m.basis, amp, 2000 + seed, seed % 2 == 0);
            let e = energy_e(&s, &m.basis, &m.grid).unwrap().total();
            let ee = energy_eta(&s, &m.params, &m.basis, &m.grid, eta).unwrap().e_eta;
            pass &= eta.powi(3) * e <= ee && ee <= 2.0 * e;
            lo = lo.min(ee / e);
            hi = hi.max(ee / e);
        }
        details.push(format!("eta {eta}: E_eta/E in [{lo:.4}, {hi:.4}]"));
    }
    outcome(pass, details.join("; "))
}

fn mass(suite: &mut Suite) -> Outcome {
    let worst = suite.drifts.iter().fold(0.0f64, |a, (_, d)| a.max(*d));
    let pass = !suite.drifts.is_empty() && suite.drifts.iter().all(|(_, d)| *d < 1e-10);
    outcome(pass, format!("{} runs, max per-step drift {worst:.2e}", suite.drifts.len()))
}

fn main() {
    let mut suite = Suite::default();
    suite.run("equilibrium-stationarity", equilibrium);
    suite.run("poincare-spectrum", poincare);
    suite.run("cancellation-identity", cancellation);
    suite.run("energy-audit-order", audit);
    suite.run("decay-boundedness", decay);
    suite.run("picard-contraction", picard);
    suite.run("closure-equivalence", closure);
    suite.run("potential-validator", validator);
    suite.run("eta-equivalence", eta_equivalence);
    suite.run("mass-conservation", mass);
    let failed: Vec<&str> = suite.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        suite.lines.len() - failed.len(),
        suite.lines.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
