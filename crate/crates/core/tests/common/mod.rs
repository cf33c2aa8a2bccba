#![allow(dead_code)]

use langtype::nn::{Graph, ParameterSet, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a small floor so that two near-zero gradients compare
/// as equal instead of dividing noise by noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare analytic parameter gradients of `build` against central finite
/// differences. Returns the worst relative error over every coordinate of
/// every trainable parameter.
pub fn max_param_gradient_error<F>(params: &ParameterSet, build: F) -> f64
where
    F: Fn(&mut Graph<'_>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build(&mut g);
        g.backward(loss).expect("backward")
    };
    let eval = |p: &ParameterSet| {
        let mut g = Graph::new(p);
        let loss = build(&mut g);
        g.scalar(loss).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for id in params.ids() {
        if !params.get(id).requires_grad() {
            continue;
        }
        let n = params.get(id).len();
        for i in 0..n {
            let orig = params.get(id).values()[i];
            probe.get_mut(id).values_mut()[i] = orig + FD_STEP;
            let up = eval(&probe);
            probe.get_mut(id).values_mut()[i] = orig - FD_STEP;
            let down = eval(&probe);
            probe.get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

/// Finite-difference check with respect to a constant input vector.
pub fn max_input_gradient_error<F>(params: &ParameterSet, input: &[f64], build: F) -> f64
where
    F: Fn(&mut Graph<'_>, Var) -> Var,
{
    // Route the input through a parameter so the engine reports its gradient.
    let mut p = params.clone();
    let id = p
        .add("__probe_input", langtype::nn::Tensor::vector(input.to_vec()).unwrap())
        .unwrap();
    for other in p.ids().collect::<Vec<_>>() {
        if other != id {
            p.set_trainable(other, false);
        }
    }
    max_param_gradient_error(&p, |g| {
        let x = g.param(id);
        build(g, x)
    })
}

pub mod synth;
