use proptest::prelude::*;
use seqmot_tensor::{Checkpoint, Graph, ParamStore, Tensor, TensorError, Var};

#[test]
fn matmul_by_identity_is_unchanged() {
    let g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let eye = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let out = a.matmul(eye).unwrap();
    assert_eq!(out.value().data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn softmax_of_single_element_is_one() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1], vec![-3.7]).unwrap());
    assert_eq!(x.softmax().unwrap().value().data(), &[1.0]);
}

#[test]
fn max_pool_gradient_is_indicator_with_first_tie() {
    let g = Graph::new();
    let x = g.param(Tensor::new(vec![4, 1], vec![0.5, 2.0, 2.0, -1.0]).unwrap());
    let loss = x.max_pool(0).unwrap().sum_all();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn sum_of_squares_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let loss = x.mul(x).unwrap().sum_all();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn unused_leaf_has_zero_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let unused = g.param(Tensor::vector(vec![5.0, 6.0, 7.0]));
    let loss = x.sum_all();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn shape_errors_name_both_shapes() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let msg = a.matmul(b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    let c = g.constant(Tensor::zeros(&[4]));
    let msg = a.add(c).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
}

#[test]
fn bce_saturates_without_overflow() {
    let g = Graph::new();
    let z = g.constant(Tensor::vector(vec![40.0, -40.0, 800.0]));
    let out = z.bce_with_logits(&[1.0, 0.0, 1.0]).unwrap();
    assert!(out.value().data().iter().all(|&l| (0.0..1e-12).contains(&l)));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>()) {
        let n = rows * cols;
        let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 2000) as f64 - 1000.0) / 37.0).collect();
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let s = x.softmax().unwrap();
        for r in 0..rows {
            let sum: f64 = s.value().row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        entries in prop::collection::vec(
            (prop::collection::vec(1usize..4, 1..3), any::<u64>()), 0..5),
        hash in "[a-f0-9]{0,64}",
    ) {
        let mut store = ParamStore::new();
        for (i, (shape, seed)) in entries.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|j| f64::from_bits(seed.rotate_left(j as u32) & 0x7fef_ffff_ffff_ffff)).collect();
            store.insert(format!("p{i}.weight"), Tensor::new(shape.clone(), data).unwrap()).unwrap();
        }
        let ckpt = Checkpoint { config_hash: hash, params: store };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.config_hash, ckpt.config_hash);
        for ((n1, t1), (n2, t2)) in back.params.iter().zip(ckpt.params.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(b1, b2);
        }
    }
}

#[test]
fn concat_preserves_order() {
    let g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let c = Var::concat(&[a, b], 1).unwrap();
    assert_eq!(c.value().data(), &[1.0, 3.0, 2.0, 4.0]);
}
