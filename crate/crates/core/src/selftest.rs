//! Quick invariant checks, run by `regionshap selftest`.
//!
//! These are smaller versions of the acceptance checks, sized to finish in a
//! few seconds on an installed binary.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::coalition::{
    bsi_all, bsi_closed_form, bsi_merged, shapley_all, shapley_montecarlo, value_ratio, Coalition, CoalitionValueTable,
    McOptions, PlayerSet,
};
use crate::imaging::{sample_baseline, AmplitudeImage, BaselineSpec, Region};
use crate::scr::{compute_scr, reweight_to_scr};
use crate::seed::SeedPath;
use crate::synthetic::{generate_dataset, BiasConfig, Split};
use crate::toy_model::{gradient_check, MlpModel};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn random_table(n: usize, seed: u64) -> CoalitionValueTable {
    let mut rng = SeedPath::root(seed).rng();
    CoalitionValueTable::from_fn(PlayerSet::new(n).unwrap(), |s| if s.is_empty() { 0.0 } else { rng.random_range(-1.0..1.0) })
        .unwrap()
}

fn ratio_fixture() -> (bool, String) {
    let r = value_ratio(&[5.80, 7.19, 3.16]).unwrap();
    let want = [0.3591, 0.4452, 0.1957];
    let err = r.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (err < 5e-4, format!("max deviation {err:.2e}"))
}

fn axioms(games: usize) -> (bool, String) {
    let mut worst = 0.0f64;
    for g in 0..games {
        let n = 2 + g % 4;
        let t = random_table(n, g as u64);
        let a = shapley_all(&t).unwrap();
        let scale = t.values().iter().map(|v| v.abs()).fold(1.0, f64::max);
        worst = worst.max(a.efficiency_residual.abs() / scale);

        // player 0 made a dummy with marginal 0.25 everywhere
        let dummy = CoalitionValueTable::from_fn(t.players().clone(), |s| {
            t.value(s.without(0)) + if s.contains(0) { 0.25 } else { 0.0 }
        })
        .unwrap();
        worst = worst.max((shapley_all(&dummy).unwrap().phi[0] - 0.25).abs());

        let w: Vec<f64> = (0..n).map(|i| i as f64 - 1.5).collect();
        let additive = CoalitionValueTable::from_fn(t.players().clone(), |s| s.members().map(|i| w[i]).sum()).unwrap();
        let phi = shapley_all(&additive).unwrap().phi;
        worst = worst.max(phi.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        worst = worst.max(bsi_all(&additive).unwrap().pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max));
    }
    (worst < 1e-9, format!("{games} games, worst deviation {worst:.2e}"))
}

fn bsi_dual(tables: usize) -> (bool, String) {
    let mut worst = 0.0f64;
    for g in 0..tables {
        let n = 2 + g % 4;
        let t = random_table(n, 10_000 + g as u64);
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((bsi_closed_form(&t, i, j).unwrap() - bsi_merged(&t, i, j).unwrap()).abs());
            }
        }
    }
    (worst < 1e-12, format!("{tables} tables, worst gap {worst:.2e}"))
}

fn montecarlo(games: usize, samples: usize) -> (bool, String) {
    let (mut inside, mut total) = (0, 0);
    for g in 0..games {
        let t = random_table(4, 20_000 + g as u64);
        let exact = shapley_all(&t).unwrap().phi;
        let est = shapley_montecarlo(&|s: Coalition| Ok::<_, String>(t.value(s)), 4, McOptions::new(samples, g as u64)).unwrap();
        for i in 0..4 {
            total += 1;
            if (est.phi_hat[i] - exact[i]).abs() < 3.0 * est.stderr[i] {
                inside += 1;
            }
        }
    }
    let frac = inside as f64 / total as f64;
    (frac >= 0.95, format!("{inside}/{total} within 3 stderr"))
}

fn scr_exactness(images: usize) -> (bool, String) {
    let config = BiasConfig { train_per_class: images.div_ceil(10), ..Default::default() };
    let samples = generate_dataset(&config, Split::Train).unwrap();
    let mut worst = 0.0f64;
    let mut untouched = true;
    for (k, s) in samples.iter().take(images).enumerate() {
        let target = 5.0 + (k % 15) as f64;
        let out = reweight_to_scr(&s.sample.image, &s.sample.labels, target).unwrap();
        worst = worst.max((compute_scr(&out.image, &s.sample.labels).unwrap().scr_db - target).abs());
        untouched &= (0..out.image.len()).all(|p| {
            s.sample.labels.region(p) == Region::Clutter || out.image.data()[p].to_bits() == s.sample.image.data()[p].to_bits()
        });
    }
    (worst < 1e-6 && untouched, format!("worst SCR error {worst:.2e} dB, non-clutter unchanged: {untouched}"))
}

fn baseline_mean(draws: usize) -> (bool, String) {
    let field = sample_baseline(BaselineSpec::HalfNormal { sigma: 0.1 }, 1, draws, 1).unwrap();
    let xs = field.image.data();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let want = 0.1 * (2.0 / std::f64::consts::PI).sqrt();
    let z = (mean - want).abs() / (sd / n.sqrt());
    (z < 4.0, format!("mean {mean:.5}, {z:.2} SEM from {want:.5}"))
}

fn gradients(configs: usize) -> (bool, String) {
    let mut worst = 0.0f64;
    for c in 0..configs {
        let seed = c as u64;
        let (h, w) = (4 + 2 * (c % 3), 4 + 2 * (c % 2));
        let model = MlpModel::random(h, w, c % 2 == 0, 3 + c % 5, 2 + c % 3, 0.5, seed).unwrap();
        let mut rng = SeedPath::root(seed).child("image").rng();
        let image = AmplitudeImage::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        worst = worst.max(gradient_check(&model, &image, c % model.classes, 1e-5).unwrap());
    }
    (worst < 1e-4, format!("{configs} configs, worst relative error {worst:.2e}"))
}

/// Runs every check; `quick` shrinks the sample sizes.
pub fn run(quick: bool) -> Vec<Check> {
    let scale = |full: usize, small: usize| if quick { small } else { full };
    let checks: Vec<(&'static str, Box<dyn Fn() -> (bool, String)>)> = vec![
        ("ratio fixture", Box::new(ratio_fixture)),
        ("shapley axioms", Box::new(move || axioms(scale(1000, 100)))),
        ("bsi dual formula", Box::new(move || bsi_dual(scale(1000, 100)))),
        ("monte carlo consistency", Box::new(move || montecarlo(scale(50, 20), scale(50_000, 10_000)))),
        ("scr exactness", Box::new(move || scr_exactness(scale(500, 50)))),
        ("half-normal baseline mean", Box::new(move || baseline_mean(scale(1_000_000, 100_000)))),
        ("gradient check", Box::new(move || gradients(scale(20, 5)))),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = f();
            Check { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn quick_suite_passes() {
        for c in super::run(true) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
