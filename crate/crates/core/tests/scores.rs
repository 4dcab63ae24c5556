use langevin_core::conditional::{conditional_mixture, conditional_score, PatchLayout, PrefixState};
use langevin_core::rng::{stream, Purpose};
use langevin_core::MixtureModel;
use rand::Rng;
use rand_distr::StandardNormal;

const FD_STEP: f64 = 1e-5;

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + FD_STEP;
            let up = f(&y);
            y[j] = x[j] - FD_STEP;
            let down = f(&y);
            y[j] = x[j];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn random_point(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn joint_score_matches_finite_differences() {
    let model = MixtureModel::synthetic(10).unwrap();
    let mut rng = stream(11, 0, Purpose::Evaluation);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = random_point(&mut rng, 10, 3.0 * 3f64.sqrt());
        let fd = central_difference(|y| model.log_density(y).unwrap(), &x);
        worst = worst.max(relative_error(&model.score(&x).unwrap(), &fd));
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

#[test]
fn perturbed_score_matches_finite_differences() {
    let model = MixtureModel::synthetic(10).unwrap();
    let mut rng = stream(12, 0, Purpose::Evaluation);
    for sigma in [0.1, 0.5, 2.0] {
        let perturbed = model.perturb(sigma).unwrap();
        for _ in 0..20 {
            let x = random_point(&mut rng, 10, 4.0);
            let fd = central_difference(|y| perturbed.log_density(y).unwrap(), &x);
            let err = relative_error(&perturbed.score(&x).unwrap(), &fd);
            assert!(err < 1e-5, "sigma {sigma}: {err}");
        }
    }
}

#[test]
fn conditional_scores_match_finite_differences() {
    let model = MixtureModel::synthetic(10).unwrap();
    let mut rng = stream(13, 0, Purpose::Evaluation);
    for q_size in [1, 5] {
        let layout = PatchLayout::new(10, q_size).unwrap();
        for q in 0..layout.num_patches() {
            for sigma in [0.0, 0.5] {
                for _ in 0..10 {
                    let x = random_point(&mut rng, 10, 3.0);
                    let prefix = PrefixState::of_point(layout, &x, q).unwrap();
                    let cond = conditional_mixture(&model, &prefix, sigma).unwrap();
                    let patch = &x[layout.range(q)];
                    let analytic = conditional_score(&model, &prefix, patch, sigma).unwrap();
                    let fd = central_difference(|y| cond.log_density(y).unwrap(), patch);
                    let err = relative_error(&analytic, &fd);
                    assert!(err < 1e-5, "Q {q_size}, patch {q}, sigma {sigma}: {err}");
                }
            }
        }
    }
}

#[test]
fn conditional_scores_at_paper_dimension() {
    let model = MixtureModel::synthetic(100).unwrap();
    let layout = PatchLayout::new(100, 10).unwrap();
    let mut rng = stream(14, 0, Purpose::Evaluation);
    for sigma in [0.0, 0.5] {
        let (_, x) = model.draw(&mut rng);
        let prefix = PrefixState::of_point(layout, &x, 3).unwrap();
        let cond = conditional_mixture(&model, &prefix, sigma).unwrap();
        let patch = &x[layout.range(3)];
        let fd = central_difference(|y| cond.log_density(y).unwrap(), patch);
        let err = relative_error(&cond.score(patch).unwrap(), &fd);
        assert!(err < 1e-5, "sigma {sigma}: {err}");
    }
}

#[test]
fn single_component_score_is_exact() {
    let model = MixtureModel::gaussian(vec![1.0, -2.0, 0.5], 0.7).unwrap();
    let x = [0.3, 0.1, -1.2];
    let expected: Vec<f64> = x
        .iter()
        .zip(model.components()[0].mean())
        .map(|(a, m)| -(a - m) / 0.7)
        .collect();
    let fd = central_difference(|y| model.log_density(y).unwrap(), &x);
    assert!(relative_error(&expected, &fd) < 1e-8);
    assert!(relative_error(&expected, &model.score(&x).unwrap()) < 1e-15);
}
