//! Fit a tiny regression with the tape and Adam, then compare its gradients
//! against central finite differences.
//!
//! cargo run --release --example autodiff_gradcheck

use termnet::autodiff::{gradcheck, Adam, Tape, Tensor};

fn main() {
    let x = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
    let y = Tensor::matrix(4, 1, vec![1.0, -2.0, -1.0, 4.0]);
    let mut params = vec![Tensor::zeros(&[2, 1]), Tensor::zeros(&[1])];
    let mut adam = Adam::new(0.05);
    for step in 0..=400 {
        let tape = Tape::new();
        let w = tape.leaf(params[0].clone());
        let b = tape.leaf(params[1].clone());
        let pred = tape.leaf(x.clone()).matmul(w).add_row_bias(b);
        let loss = pred.sub(tape.leaf(y.clone())).square().mean();
        let g = tape.backward(loss);
        let grads = [g.get(w), g.get(b)];
        if step % 100 == 0 {
            println!("step {step:>3} loss {:.6}", loss.item());
        }
        adam.step(&mut params, &grads);
    }
    println!("w = {:?}, b = {:?}", params[0].data, params[1].data);

    let err = gradcheck(
        |t, v| t.leaf(x.clone()).matmul(v[0]).add_row_bias(v[1]).tanh().sub(t.leaf(y.clone())).square().mean(),
        &params,
        1e-5,
    );
    println!("largest relative gradient error: {err:.2e}");
}
