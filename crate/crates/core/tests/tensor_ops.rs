use specmae_core::rng::Xoshiro256;
use specmae_core::tensor::{NodeId, Tape, Tensor};
use specmae_core::Error;

const H: f64 = 1e-5;

fn rand_matrix(rng: &mut Xoshiro256, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.next_gauss()).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Checks d(sum of output)/d(input) for a graph builder against central
/// finite differences on every input coordinate.
fn fd_check(input: Tensor, build: impl Fn(&mut Tape, NodeId) -> NodeId) {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let out = build(&mut tape, x);
    let seed = Tensor { shape: tape.value(out).shape.clone(), data: vec![1.0; tape.value(out).numel()] };
    let grads = tape.backward(vec![(out, seed)]).unwrap();
    let analytic = grads[x].clone().expect("input gradient present");

    let eval = |t: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let out = build(&mut tape, x);
        tape.value(out).data.iter().sum()
    };
    for i in 0..input.numel() {
        let mut plus = input.clone();
        plus.data[i] += H;
        let mut minus = input.clone();
        minus.data[i] -= H;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
        let a = analytic.data[i];
        let denom = a.abs().max(fd.abs()).max(1.0);
        assert!(
            (a - fd).abs() / denom < 1e-6,
            "coord {i}: analytic {a} fd {fd}"
        );
    }
}

#[test]
fn matmul_hand_value_and_gradients() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data, vec![19.0, 22.0, 43.0, 50.0]);

    let seed = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
    let grads = tape.backward(vec![(c, seed)]).unwrap();
    // dA = dC·Bᵀ, dB = Aᵀ·dC with dC all ones
    assert_eq!(grads[a].as_ref().unwrap().data, vec![11.0, 15.0, 11.0, 15.0]);
    assert_eq!(grads[b].as_ref().unwrap().data, vec![4.0, 4.0, 6.0, 6.0]);

    let bad = tape.leaf(Tensor::matrix(3, 3, vec![0.0; 9]).unwrap());
    assert!(matches!(tape.matmul(a, bad), Err(Error::Shape(_))));
}

#[test]
fn matmul_nt_matches_transposed_matmul() {
    let mut rng = Xoshiro256::seeded(3);
    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 2, 4);
    let mut tape = Tape::new();
    let na = tape.leaf(a.clone());
    let nb = tape.leaf(b.clone());
    let c = tape.matmul_nt(na, nb).unwrap();
    // reference: a · bᵀ by hand
    for i in 0..3 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a.data[i * 4 + k] * b.data[j * 4 + k];
            }
            assert!((tape.value(c).data[i * 2 + j] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn elementwise_op_gradients_match_fd() {
    let mut rng = Xoshiro256::seeded(11);
    fd_check(rand_matrix(&mut rng, 3, 4), |t, x| t.gelu(x));
    fd_check(rand_matrix(&mut rng, 3, 4), |t, x| t.scale(x, -1.7));
    fd_check(rand_matrix(&mut rng, 3, 4), |t, x| t.softmax_rows(x).unwrap());
    fd_check(rand_matrix(&mut rng, 4, 6), |t, x| t.slice_cols(x, 1, 4).unwrap());
    fd_check(rand_matrix(&mut rng, 3, 4), |t, x| {
        t.gather_rows(x, vec![2, 0, 2]).unwrap()
    });
    fd_check(rand_matrix(&mut rng, 2, 4), |t, x| {
        t.scatter_rows(x, vec![3, 1], 5).unwrap()
    });
    fd_check(rand_matrix(&mut rng, 1, 4), |t, x| t.repeat_row(x, 6).unwrap());
}

#[test]
fn composite_graph_gradients_match_fd() {
    let mut rng = Xoshiro256::seeded(23);
    let w = rand_matrix(&mut rng, 4, 4);
    let bias = rand_matrix(&mut rng, 1, 4);
    let gamma = Tensor { shape: vec![4], data: vec![1.0, 0.5, 2.0, 1.5] };
    let beta = Tensor { shape: vec![4], data: vec![0.1, -0.2, 0.0, 0.3] };
    fd_check(rand_matrix(&mut rng, 3, 4), |t, x| {
        let wn = t.leaf(w.clone());
        let bn = t.leaf(bias.clone());
        let gn = t.leaf(gamma.clone());
        let be = t.leaf(beta.clone());
        let h = t.matmul(x, wn).unwrap();
        let h = t.add_bias_row(h, bn).unwrap();
        let h = t.layer_norm(h, gn, be, 1e-5).unwrap();
        let h = t.gelu(h);
        t.softmax_rows(h).unwrap()
    });
}

#[test]
fn layer_norm_normalizes_rows() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0]).unwrap());
    let g = tape.leaf(Tensor { shape: vec![4], data: vec![1.0; 4] });
    let b = tape.leaf(Tensor { shape: vec![4], data: vec![0.0; 4] });
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    for row in 0..2 {
        let vals = &tape.value(y).data[row * 4..(row + 1) * 4];
        let mean: f64 = vals.iter().sum::<f64>() / 4.0;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn softmax_rows_is_stable_and_normalized() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(2, 3, vec![1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0]).unwrap());
    let y = tape.softmax_rows(x).unwrap();
    for row in 0..2 {
        let vals = &tape.value(y).data[row * 3..(row + 1) * 3];
        assert!(vals.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // shifted logits give the same distribution
    let t0 = &tape.value(y).data[..3];
    let mut tape2 = Tape::new();
    let x2 = tape2.leaf(Tensor::matrix(1, 3, vec![0.0, 1.0, 2.0]).unwrap());
    let y2 = tape2.softmax_rows(x2).unwrap();
    for (a, b) in t0.iter().zip(&tape2.value(y2).data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gelu_frozen_spot_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 2, vec![0.5, -1.3]).unwrap());
    let y = tape.gelu(x);
    let v = &tape.value(y).data;
    assert!((v[0] - 0.34571400982514394).abs() < 1e-15);
    assert!((v[1] - (-0.1260709876826906)).abs() < 1e-15);
}

#[test]
fn backward_error_cases() {
    let tape = Tape::new();
    assert!(matches!(tape.backward(vec![]), Err(Error::Trace)));

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let bad_seed = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
    assert!(matches!(tape.backward(vec![(x, bad_seed)]), Err(Error::Shape(_))));
}

#[test]
fn backward_accumulates_over_multiple_uses() {
    // y = x + x -> dy/dx = 2
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
    let y = tape.add(x, x).unwrap();
    let seed = Tensor::matrix(1, 3, vec![1.0; 3]).unwrap();
    let grads = tape.backward(vec![(y, seed)]).unwrap();
    assert_eq!(grads[x].as_ref().unwrap().data, vec![2.0, 2.0, 2.0]);
}

#[test]
fn concat_and_slice_are_inverse() {
    let mut rng = Xoshiro256::seeded(7);
    let a = rand_matrix(&mut rng, 3, 2);
    let b = rand_matrix(&mut rng, 3, 5);
    let mut tape = Tape::new();
    let na = tape.leaf(a.clone());
    let nb = tape.leaf(b.clone());
    let cat = tape.concat_cols(vec![na, nb]).unwrap();
    assert_eq!(tape.value(cat).shape, vec![3, 7]);
    let left = tape.slice_cols(cat, 0, 2).unwrap();
    let right = tape.slice_cols(cat, 2, 7).unwrap();
    assert_eq!(tape.value(left).data, a.data);
    assert_eq!(tape.value(right).data, b.data);
}
