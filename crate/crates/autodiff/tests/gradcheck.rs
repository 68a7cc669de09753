//! Central-difference checks of every differentiable op (h = 1e-3), run on
//! the f64 instantiation of the engine.

use viewuq_autodiff::gradcheck::{op_cases, random_tensor, GradCase, Inputs, Leaf};
use viewuq_autodiff::{rng, Graph, RunConfig};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-8;

fn check(case: &mut GradCase) {
    let report = case.check(H, FLOOR).unwrap();
    assert!(report.checked > 0, "{}: nothing checked", case.name);
    assert!(
        report.worst_rel < TOL,
        "{}: worst relative error {:e} at {}",
        case.name,
        report.worst_rel,
        report.worst_at
    );
}

#[test]
fn every_op_over_three_seeds() {
    for seed in 0..3 {
        for mut case in op_cases(seed).unwrap() {
            check(&mut case);
        }
    }
}

#[test]
fn op_suite_covers_the_layer_set() {
    let names: Vec<&str> = op_cases(0).unwrap().iter().map(|c| c.name).collect();
    for op in ["dense", "conv2d 3x3", "upsample2x", "batch_norm2d train", "batch_norm2d eval", "relu", "tanh", "reshape", "add", "dropout2d mc", "abs_sum", "mse"] {
        assert!(names.contains(&op), "{op}");
    }
}

/// Two-layer MLP: every parameter against finite differences.
#[test]
fn mlp_all_parameters() {
    for seed in 100..105 {
        let mut r = rng::stream(seed);
        let mut g = Graph::<f64>::new();
        let x = g.input("x");
        let t = g.input("t");
        let w1 = g.param("w1", random_tensor(&mut r, &[8, 3], 0.8));
        let b1 = g.param("b1", random_tensor(&mut r, &[8], 0.3));
        let w2 = g.param("w2", random_tensor(&mut r, &[2, 8], 0.8));
        let b2 = g.param("b2", random_tensor(&mut r, &[2], 0.3));
        let h = g.dense(x, w1, b1);
        let h = g.relu(h);
        let y = g.dense(h, w2, b2);
        let loss = g.mse(y, t);
        let mut inputs = Inputs::new();
        inputs.insert("x".into(), random_tensor(&mut r, &[4, 3], 1.0).with_requires_grad(true));
        inputs.insert("t".into(), random_tensor(&mut r, &[4, 2], 1.0));
        let mut case = GradCase {
            name: "mlp",
            graph: g,
            inputs,
            loss,
            leaves: vec![Leaf::Input("x".into(), x), Leaf::Param(w1), Leaf::Param(b1), Leaf::Param(w2), Leaf::Param(b2)],
            cfg: RunConfig::eval(),
        };
        check(&mut case);
    }
}
