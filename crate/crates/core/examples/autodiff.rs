//! Reverse-mode gradients on the tape, checked against central differences.

use mixtext::tensor::{finite_diff_check, Tape, Tensor};

fn main() -> mixtext::Result<()> {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::from_rows(&[
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
    ])?);
    let b = tape.param(Tensor::from_rows(&[
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 1.0],
    ])?);
    let c = tape.matmul(a, b)?;
    println!("a·b = {:?}", tape.value(c).data());

    let p = tape.softmax(c, 1)?;
    let lp = tape.log(p);
    let loss = tape.mean(lp);
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).item());
    println!("d loss / d b = {:?}", grads.wrt(b).data());

    let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![1.5, 0.1, -0.4]])?;
    let g = Tensor::new(vec![3], vec![1.0, 0.5, 2.0])?;
    let bias = Tensor::new(vec![3], vec![0.0, 0.1, -0.1])?;
    let err = finite_diff_check(
        |t, v| {
            let n = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let h = t.gelu(n);
            let s = t.log_softmax(h)?;
            Ok(t.sum(s))
        },
        &[x, g, bias],
        1e-5,
    )?;
    println!("layer_norm → gelu → log_softmax: max relative gradient error {err:.2e}");
    Ok(())
}
