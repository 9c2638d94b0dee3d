//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod checkpoint;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use tape::{Gradients, Tape, Var, SD_EPS};
pub use tensor::{matmul, Tensor};

/// `lambda * sum |w|` over the given weight tensors.
pub fn l1_penalty<'t>(weights: &[Var<'t>], lambda: f64) -> Option<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for w in weights {
        let s = w.abs().sum();
        total = Some(match total {
            Some(t) => t.add(s),
            None => s,
        });
    }
    total.map(|t| t.scale(lambda))
}

/// Relative error used by the finite-difference checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the tape gradient of `f` against central finite differences with
/// step `h` for every element of every input. Returns the largest relative
/// error.
pub fn gradcheck(f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>, inputs: &[Tensor], h: f64) -> f64 {
    let eval = |inputs: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        f(&tape, &vars).item()
    };
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss);
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(*v);
        for i in 0..inputs[k].len() {
            let x = inputs[k].data[i];
            probe[k].data[i] = x + h;
            let up = eval(&probe);
            probe[k].data[i] = x - h;
            let down = eval(&probe);
            probe[k].data[i] = x;
            worst = worst.max(relative_error(g.data[i], (up - down) / (2.0 * h)));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Values bounded away from zero, for ops with a kink or pole there.
    fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        random(rng, shape).map(|x| if x >= 0.0 { x + 0.2 } else { x - 0.2 })
    }

    #[test]
    fn every_operator_passes_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3, 4]);
        let m = random(&mut rng, &[4, 2]);
        let bias = random(&mut rng, &[4]);
        let nz = away_from_zero(&mut rng, &[3, 4]);
        let pos = random(&mut rng, &[3, 4]).map(|x| x.abs() + 0.5);
        // Weighted sums keep the scalar loss sensitive to every element.
        fn wsum<'t>(t: &'t Tape, v: Var<'t>) -> Var<'t> {
            let shape = v.shape();
            let n: usize = shape.iter().product();
            let w = t.leaf(Tensor::new(shape, (0..n).map(|i| 0.3 + 0.1 * i as f64).collect()));
            v.mul(w).sum()
        }
        let cases: Vec<(&str, Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>, Vec<Tensor>)> = vec![
            ("matmul", Box::new(move |t, v| wsum(t, v[0].matmul(v[1]))), vec![a.clone(), m.clone()]),
            ("add", Box::new(move |t, v| wsum(t, v[0].add(v[1]))), vec![a.clone(), b.clone()]),
            ("sub", Box::new(move |t, v| wsum(t, v[0].sub(v[1]))), vec![a.clone(), b.clone()]),
            ("mul", Box::new(move |t, v| wsum(t, v[0].mul(v[1]))), vec![a.clone(), b.clone()]),
            ("div", Box::new(move |t, v| wsum(t, v[0].div(v[1]))), vec![a.clone(), nz.clone()]),
            ("bias", Box::new(move |t, v| wsum(t, v[0].add_row_bias(v[1]))), vec![a.clone(), bias.clone()]),
            ("scale", Box::new(move |t, v| wsum(t, v[0].scale(-2.5).add_scalar(0.7))), vec![a.clone()]),
            ("concat0", Box::new(move |t, v| wsum(t, Var::concat(&[v[0], v[1]], 0))), vec![a.clone(), b.clone()]),
            ("concat1", Box::new(move |t, v| wsum(t, Var::concat(&[v[0], v[1].slice(1, 1, 2)], 1))), vec![a.clone(), b.clone()]),
            ("slice0", Box::new(move |t, v| wsum(t, v[0].slice(0, 1, 2))), vec![a.clone()]),
            ("reshape", Box::new(move |t, v| wsum(t, v[0].reshape(&[2, 6]))), vec![a.clone()]),
            ("gather", Box::new(move |t, v| wsum(t, v[0].gather_rows(&[2, 0, 2]))), vec![a.clone()]),
            ("sigmoid", Box::new(move |t, v| wsum(t, v[0].sigmoid())), vec![a.clone()]),
            ("tanh", Box::new(move |t, v| wsum(t, v[0].tanh())), vec![a.clone()]),
            ("relu", Box::new(move |t, v| wsum(t, v[0].relu())), vec![nz.clone()]),
            ("exp", Box::new(move |t, v| wsum(t, v[0].exp())), vec![a.clone()]),
            ("log", Box::new(move |t, v| wsum(t, v[0].log())), vec![pos.clone()]),
            ("abs", Box::new(move |t, v| wsum(t, v[0].abs())), vec![nz.clone()]),
            ("square", Box::new(move |t, v| wsum(t, v[0].square())), vec![a.clone()]),
            ("mean", Box::new(move |t, v| wsum(t, v[0]).add(v[0].mean())), vec![a.clone()]),
            ("sd", Box::new(|_, v| v[0].sd()), vec![a.clone()]),
            ("clamp", Box::new(move |t, v| wsum(t, v[0].scale(3.0).clamp(-1.0, 1.0))), vec![a.map(|x| if (x * 3.0).abs() > 0.95 && (x * 3.0).abs() < 1.05 { 0.1 } else { x })]),
        ];
        for (name, f, inputs) in &cases {
            let err = gradcheck(f, inputs, h);
            assert!(err <= 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn least_squares_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[5, 3]);
        let w = random(&mut rng, &[3, 1]);
        let y = random(&mut rng, &[5, 1]);
        let tape = Tape::new();
        let (xv, wv, yv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(y.clone()));
        let loss = xv.matmul(wv).sub(yv).square().mean();
        let g = tape.backward(loss).get(wv);
        // d/dw mean((Xw - y)^2) = 2/n X^T (Xw - y)
        let r: Vec<f64> = (0..5).map(|i| (0..3).map(|j| x.data[i * 3 + j] * w.data[j]).sum::<f64>() - y.data[i]).collect();
        for j in 0..3 {
            let expected = 2.0 / 5.0 * (0..5).map(|i| x.data[i * 3 + j] * r[i]).sum::<f64>();
            assert!((g.data[j] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, &[2, 3]);
        let grad_of = |a: f64, b: f64| {
            let tape = Tape::new();
            let v = tape.leaf(x.clone());
            let l1 = v.tanh().sum();
            let l2 = v.square().mean();
            let g = tape.backward(l1.scale(a).add(l2.scale(b)));
            g.get(v)
        };
        let (g1, g2, g12) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(2.0, -3.0));
        for i in 0..6 {
            assert!((g12.data[i] - (2.0 * g1.data[i] - 3.0 * g2.data[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn l1_values_and_gradient() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[2, 2]));
        assert_eq!(l1_penalty(&[z], 1e-5).unwrap().item(), 0.0);
        let w = tape.leaf(Tensor::scalar(2.0));
        assert!((l1_penalty(&[w], 1e-5).unwrap().item() - 2e-5).abs() < 1e-20);
        let err = gradcheck(
            |_, v| l1_penalty(&[v[0], v[1]], 1e-5).unwrap(),
            &[Tensor::matrix(1, 3, vec![0.5, -0.3, 1.2]), Tensor::scalar(-2.0)],
            1e-5,
        );
        assert!(err <= 1e-4, "{err}");
        let g = tape.backward(l1_penalty(&[z], 1e-5).unwrap());
        assert_eq!(g.get(z).data, vec![0.0; 4]);
    }
}
