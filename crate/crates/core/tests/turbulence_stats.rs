use layertomo::field::LayerStack;
use layertomo::geometry::GeometrySpec;
use layertomo::operator::TomoOperator;
use layertomo::turbulence::{generate_atmosphere, TurbulenceSpec};

const STRENGTHS: [f64; 3] = [0.6, 0.3, 0.1];

/// One on-axis direction, so every layer lives on the same grid and the
/// layers differ only through their strengths.
fn on_axis(n: usize) -> TomoOperator {
    let spec = GeometrySpec::new(21.0, vec![[0.0, 0.0]], vec![0.0, 5000.0, 10000.0], vec![0.5, 0.3, 0.2]).unwrap();
    TomoOperator::new(&spec, n).unwrap()
}

fn layer_variances(stack: &LayerStack) -> Vec<f64> {
    (0..stack.n_layers())
        .map(|l| {
            let mask = stack.layout().layer(l).mask();
            let (sum, count) = stack
                .layer(l)
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .fold((0.0, 0usize), |(s, c), (v, _)| (s + v * v, c + 1));
            sum / count as f64
        })
        .collect()
}

#[test]
fn layer_variances_follow_the_strengths() {
    let op = on_axis(48);
    let mut mean = [0.0; 3];
    let seeds = 120;
    for seed in 0..seeds {
        let tspec = TurbulenceSpec::new(0.157, 25.0, STRENGTHS.to_vec(), seed).unwrap();
        let stack = generate_atmosphere(&tspec, op.spec(), op.layout()).unwrap();
        for (m, v) in mean.iter_mut().zip(layer_variances(&stack)) {
            *m += v / seeds as f64;
        }
    }
    for l in 1..3 {
        let got = mean[l] / mean[0];
        let want = STRENGTHS[l] / STRENGTHS[0];
        assert!((got / want - 1.0).abs() < 0.1, "layer {l}: ratio {got} vs {want}");
    }
}

#[test]
fn fixed_seed_screens_scale_with_the_fried_parameter() {
    // The spectrum is proportional to r0^(-5/3), so with the random draws
    // held fixed every value scales by r0^(-5/6).
    let op = on_axis(32);
    let a = TurbulenceSpec::new(0.1, 25.0, STRENGTHS.to_vec(), 5).unwrap();
    let b = TurbulenceSpec::new(0.2, 25.0, STRENGTHS.to_vec(), 5).unwrap();
    let sa = generate_atmosphere(&a, op.spec(), op.layout()).unwrap();
    let sb = generate_atmosphere(&b, op.spec(), op.layout()).unwrap();
    let factor = 2f64.powf(5.0 / 6.0);
    let diff = sb.scaled(factor).difference(&sa).unwrap().norm();
    assert!(diff <= 1e-12 * sa.norm(), "{diff:e}");
}

#[test]
fn zero_strength_layers_stay_flat() {
    let op = on_axis(32);
    let tspec = TurbulenceSpec::new(0.157, 25.0, vec![1.0, 0.0, 0.0], 9).unwrap();
    let stack = generate_atmosphere(&tspec, op.spec(), op.layout()).unwrap();
    assert!(stack.layer(0).iter().any(|v| *v != 0.0));
    assert!(stack.layer(1).iter().chain(stack.layer(2)).all(|v| *v == 0.0));
}
