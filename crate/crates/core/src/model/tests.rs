use std::f64::consts::{PI, TAU};

use super::*;
use crate::diff::grad_loss;
use crate::net::{init_params, ActivationKind, NetConfig};

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let inner: f64 = (1..panels).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

fn constant_field(c: f64) -> FnField<impl Fn(f64, f64) -> f64, impl Fn(f64, f64) -> (f64, f64)> {
    FnField::new(move |_, _| c, |_, _| (0.0, 0.0))
}

#[test]
fn polynomial_ic_values() {
    let spec = ProblemSpec::default();
    let u = |x| initial_condition(&spec, x).unwrap();
    assert!((u(PI) - 3.0 / (2.0 * PI)).abs() < 1e-15);
    assert_eq!(u(0.0), 0.0);
    assert_eq!(u(PI / 2.0), 0.0);
    assert_eq!(u(3.0 * PI / 2.0), 0.0);
    assert_eq!(u(TAU), 0.0);
}

#[test]
fn dirac_ic_values() {
    let spec = ProblemSpec::with_ic(InitialConditionKind::Dirac);
    let eps = spec.mollifier;
    let u = |x| initial_condition(&spec, x).unwrap();
    let peak = 1.0 / (8.0 * eps) + 0.5;
    assert!((u(3.0 * PI / 4.0) - peak).abs() < 1e-12);
    assert!((u(5.0 * PI / 4.0) - peak).abs() < 1e-12);
    assert_eq!(u(PI), 0.5);
    assert_eq!(u(PI / 2.0), 0.5);
    assert_eq!(u(3.0 * PI / 2.0), 0.0);
    assert_eq!(u(0.3), 0.0);
}

#[test]
fn piecewise_ic_values() {
    let spec = ProblemSpec::with_ic(InitialConditionKind::Piecewise);
    let u = |x| initial_condition(&spec, x).unwrap();
    assert_eq!(u(PI), 2.0 / (3.0 * PI));
    assert_eq!(u(PI / 2.0), 2.0 / (3.0 * PI));
    assert_eq!(u(0.1), 1.0 / (3.0 * PI));
}

#[test]
fn ic_outside_domain_is_rejected() {
    let spec = ProblemSpec::default();
    for x in [-0.1, 7.0, f64::NAN] {
        assert!(matches!(initial_condition(&spec, x), Err(Error::Domain { .. })));
    }
}

#[test]
fn ic_mass_matches_trapezoid() {
    for ic in [InitialConditionKind::Polynomial, InitialConditionKind::Piecewise] {
        let spec = ProblemSpec::with_ic(ic);
        let numeric = trapezoid(|x| initial_condition(&spec, x).unwrap(), 0.0, TAU, 1 << 16);
        assert!((numeric - 1.0).abs() < 1e-4, "{ic}: {numeric}");
        assert!((spec.ic_mass() - 1.0).abs() < 1e-14);
    }
    // The trapezoid error on the parabola is exactly (h²/12)·12/π² = 4/N²,
    // so 1e-8 needs N ≳ 20000 panels.
    let spec = ProblemSpec::default();
    let numeric = trapezoid(|x| initial_condition(&spec, x).unwrap(), 0.0, TAU, 4096);
    assert!((numeric - 1.0 + 4.0 / 4096f64.powi(2)).abs() < 1e-12);
    let numeric = trapezoid(|x| initial_condition(&spec, x).unwrap(), 0.0, TAU, 1 << 15);
    assert!((numeric - 1.0).abs() < 1e-8);

    let spec = ProblemSpec::with_ic(InitialConditionKind::Dirac);
    assert!((spec.ic_mass() - (0.5 + PI / 2.0)).abs() < 1e-13);
}

#[test]
fn cell_averages_match_fine_quadrature() {
    for ic in [
        InitialConditionKind::Polynomial,
        InitialConditionKind::Dirac,
        InitialConditionKind::Piecewise,
    ] {
        let spec = ProblemSpec::with_ic(ic);
        for &(lo, hi) in &[(0.0, 0.4), (1.4, 1.7), (2.3, 2.5), (3.0, 4.0), (4.6, 4.8)] {
            let avg = spec.ic_cell_average(lo, hi);
            // Midpoint sums handle the jumps without evaluating on them.
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let numeric: f64 = (0..n)
                .map(|i| initial_condition(&spec, lo + (i as f64 + 0.5) * h).unwrap())
                .sum::<f64>()
                / n as f64;
            assert!((avg - numeric).abs() < 1e-4, "{ic} on [{lo},{hi}]: {avg} vs {numeric}");
        }
    }
}

#[test]
fn uniform_density_has_zero_velocity() {
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(128).unwrap();
    let field = constant_field(1.0);
    for theta in [0.0, 0.5, 2.0, 4.0, 6.2] {
        let (v, dv) = velocity_and_slope(&field, &spec, &quad, theta, 0.3).unwrap();
        assert!(v.abs() < 1e-10 && dv.abs() < 1e-10);
    }
}

#[test]
fn first_harmonics_are_integrated_exactly() {
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(128).unwrap();
    let cos_field = FnField::new(|phi: f64, _| phi.cos(), |phi: f64, _| (-phi.sin(), 0.0));
    let sin_field = FnField::new(|phi: f64, _| phi.sin(), |phi: f64, _| (phi.cos(), 0.0));
    for theta in [0.0, 0.7, 2.5, 4.1, 5.9] {
        let v = velocity_of(&cos_field, &spec, &quad, theta, 0.0).unwrap();
        assert!((v + PI * theta.sin()).abs() < 1e-10);
        let v = velocity_of(&sin_field, &spec, &quad, theta, 0.0).unwrap();
        assert!((v - PI * theta.cos()).abs() < 1e-10);
    }
}

#[test]
fn velocity_scales_with_coupling() {
    let quad = QuadratureRule::uniform(64).unwrap();
    let field = FnField::new(|phi: f64, _| 1.0 + phi.cos(), |phi: f64, _| (-phi.sin(), 0.0));
    let base = ProblemSpec::default();
    let strong = ProblemSpec { coupling: 2.5, ..base };
    let a = velocity_of(&field, &base, &quad, 1.1, 0.0).unwrap();
    let b = velocity_of(&field, &strong, &quad, 1.1, 0.0).unwrap();
    assert!((b - 2.5 * a).abs() < 1e-13);
}

#[test]
fn residual_of_transported_profile_vanishes() {
    // u(θ,t) = 1 is a steady state; so is any density with V ≡ 0 and u_t = 0.
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(32).unwrap();
    let r = residual_of(&constant_field(0.7), &spec, &quad, 1.0, 0.5).unwrap();
    assert!(r.abs() < 1e-12);
}

#[test]
fn residual_matches_finite_difference_oracle() {
    // Independent oracle: evaluate the flux V u on a small θ stencil and
    // difference it numerically; add a numerical time derivative.
    let config = NetConfig::new(2, 8, ActivationKind::Tanh, 4);
    let params = init_params(&config).unwrap();
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(128).unwrap();
    let u = |theta: f64, t: f64| crate::net::forward(&params, &config, theta, t).unwrap();
    let v = |theta: f64, t: f64| {
        let s: f64 = quad.nodes().iter().map(|&phi| (theta - phi).sin() * u(phi, t)).sum();
        -spec.coupling * s * quad.step()
    };
    let h = 1e-5;
    for &(theta, t) in &[(1.0, 0.3), (3.3, 0.8), (5.0, 0.1)] {
        let flux = |x: f64| v(x, t) * u(x, t);
        let oracle = (u(theta, t + h) - u(theta, t - h)) / (2.0 * h) + (flux(theta + h) - flux(theta - h)) / (2.0 * h);
        let r = residual(&params, &config, &spec, &quad, theta, t).unwrap();
        assert!((r - oracle).abs() < 1e-6 * oracle.abs().max(1.0), "{r} vs {oracle}");
    }
}

#[test]
fn losses_are_means_of_squares() {
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(16).unwrap();
    // u = 0.5 t: residual is exactly ∂t u = 0.5 because V vanishes for a uniform field.
    let field = FnField::new(|_, t: f64| 0.5 * t, |_, _| (0.0, 0.5));
    let l = loss_residual_of(&field, &spec, &quad, &[(1.0, 0.2)]).unwrap();
    assert!((l - 0.25).abs() < 1e-15);
    let zero = constant_field(0.0);
    let pts = [PI, 0.0];
    let l = loss_ic_of(&zero, &spec, &pts).unwrap();
    let expected = (3.0 / (2.0 * PI)).powi(2) / 2.0;
    assert!((l - expected).abs() < 1e-15);
    assert_eq!(loss_total(LossWeights::default(), 0.25, 0.5), 0.75);
    assert_eq!(loss_total(LossWeights { residual: 2.0, ic: 0.0 }, 0.25, 0.5), 0.5);
    assert!(loss_residual_of(&zero, &spec, &quad, &[]).is_err());
}

fn small_problem(activation: ActivationKind) -> (NetConfig, ParamSet, Vec<(f64, f64)>, Vec<f64>) {
    let config = NetConfig::new(2, 6, activation, 31);
    let params = init_params(&config).unwrap();
    let colloc: Vec<(f64, f64)> = (0..9)
        .map(|i| ((i as f64 * 0.71 + 0.2) % TAU, (i as f64 * 0.37 + 0.05) % 1.0))
        .collect();
    let ic: Vec<f64> = (0..7).map(|i| (i as f64 + 0.5) * TAU / 7.0).collect();
    (config, params, colloc, ic)
}

#[test]
fn batched_objective_matches_scalar_losses() {
    for activation in ActivationKind::ALL {
        let (config, params, colloc, ic) = small_problem(activation);
        let spec = ProblemSpec::default();
        let quad = QuadratureRule::uniform(24).unwrap();
        let mut objective = PinnObjective::new(
            &config,
            &spec,
            &quad,
            &colloc,
            &ic,
            LossWeights { residual: 1.3, ic: 0.6 },
        )
        .unwrap();
        objective.set_chunk_rows(60);
        let parts = objective.loss(&params).unwrap();
        let l_res = loss_residual(&params, &config, &spec, &quad, &colloc).unwrap();
        let l_ic = loss_ic(&params, &config, &spec, &ic).unwrap();
        assert!((parts.residual - l_res).abs() <= 1e-12 * l_res.max(1e-12));
        assert!((parts.ic - l_ic).abs() <= 1e-12 * l_ic.max(1e-12));
        assert!((parts.total - (1.3 * l_res + 0.6 * l_ic)).abs() <= 1e-12 * parts.total);
    }
}

#[test]
fn batched_gradient_matches_tape() {
    for activation in ActivationKind::ALL {
        let (config, params, colloc, ic) = small_problem(activation);
        let spec = ProblemSpec {
            coupling: 1.7,
            ..ProblemSpec::default()
        };
        let quad = QuadratureRule::uniform(12).unwrap();
        let weights = LossWeights { residual: 0.8, ic: 1.4 };
        let mut objective = PinnObjective::new(&config, &spec, &quad, &colloc, &ic, weights).unwrap();
        objective.set_chunk_rows(40);
        let (parts, grad) = objective.loss_and_grad(&params).unwrap();
        let (loss, want) = grad_loss(&params, &config, |net| {
            let r = loss_residual_of(net, &spec, &quad, &colloc)?;
            let i = loss_ic_of(net, &spec, &ic)?;
            Ok(r * weights.residual + i * weights.ic)
        })
        .unwrap();
        assert!((parts.total - loss).abs() <= 1e-12 * loss);
        for (k, (a, b)) in grad.iter().zip(want.as_slice()).enumerate() {
            assert!(
                (a - b).abs() <= 1e-10 * b.abs().max(1e-3),
                "{activation} component {k}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn batched_gradient_matches_finite_differences() {
    let (config, params, colloc, ic) = small_problem(ActivationKind::Sin);
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(16).unwrap();
    let objective = PinnObjective::new(&config, &spec, &quad, &colloc, &ic, LossWeights::default()).unwrap();
    let (_, grad) = objective.loss_and_grad(&params).unwrap();
    let h = 1e-6;
    for k in (0..params.len()).step_by(5) {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.as_mut_slice()[k] += h;
        minus.as_mut_slice()[k] -= h;
        let fd = (objective.loss(&plus).unwrap().total - objective.loss(&minus).unwrap().total) / (2.0 * h);
        assert!(
            (grad[k] - fd).abs() <= 1e-6 * fd.abs().max(1e-2),
            "component {k}: {} vs {fd}",
            grad[k]
        );
    }
}

#[test]
fn chunking_does_not_change_results() {
    let (config, params, colloc, ic) = small_problem(ActivationKind::Tanh);
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(20).unwrap();
    let mut a = PinnObjective::new(&config, &spec, &quad, &colloc, &ic, LossWeights::default()).unwrap();
    let b = a.clone();
    a.set_chunk_rows(1);
    let (pa, ga) = a.loss_and_grad(&params).unwrap();
    let (pb, gb) = b.loss_and_grad(&params).unwrap();
    assert!((pa.total - pb.total).abs() <= 1e-13 * pb.total);
    for (x, y) in ga.iter().zip(&gb) {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-6));
    }
}

#[test]
fn objective_rejects_mismatched_params() {
    let (config, _, colloc, ic) = small_problem(ActivationKind::Tanh);
    let spec = ProblemSpec::default();
    let quad = QuadratureRule::uniform(8).unwrap();
    let objective = PinnObjective::new(&config, &spec, &quad, &colloc, &ic, LossWeights::default()).unwrap();
    let other = init_params(&NetConfig::new(3, 6, ActivationKind::Tanh, 0)).unwrap();
    assert!(matches!(objective.loss(&other), Err(Error::Shape(_))));
}

#[test]
fn ic_kind_parsing() {
    assert_eq!(
        "poly".parse::<InitialConditionKind>().unwrap(),
        InitialConditionKind::Polynomial
    );
    assert_eq!(
        "Dirac".parse::<InitialConditionKind>().unwrap(),
        InitialConditionKind::Dirac
    );
    assert_eq!(
        "piecewise".parse::<InitialConditionKind>().unwrap(),
        InitialConditionKind::Piecewise
    );
    assert!("gauss".parse::<InitialConditionKind>().is_err());
}
