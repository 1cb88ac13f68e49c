use super::*;
use crate::error::Error;
use crate::rng;
use proptest::prelude::*;
use rand::Rng;

fn store_with<F: Real>(name: &str, rows: usize, cols: usize, data: Vec<F>) -> (ParamStore<F>, ParamId) {
    let mut s = ParamStore::new();
    let id = s.add(name, rows, cols, data);
    (s, id)
}

#[test]
fn matmul_identity() {
    let tape = Tape::<f64>::new();
    let eye = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let m = tape.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let out = eye.matmul(&m).unwrap();
    assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_hand_product() {
    // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]], multiplied out by hand.
    let tape = Tape::<f64>::new();
    let a = tape.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let b = tape.constant(2, 1, vec![5.0, 6.0]);
    let out = a.matmul(&b).unwrap();
    assert_eq!(out.shape(), vec![2, 1]);
    assert_eq!(out.to_vec(), vec![17.0, 39.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(2, 3, vec![0.0; 6]);
    let b = tape.constant(2, 3, vec![0.0; 6]);
    match a.matmul(&b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {:?}", other.map(|t| t.shape())),
    }
}

#[test]
fn masked_softmax_uniform_rows() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(1, 3, vec![0.0, 0.0, 0.0]);
    let y = x.masked_softmax(&[true, true, true]).unwrap().to_vec();
    for v in y {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    let x = tape.constant(1, 3, vec![5.0, 5.0, 5.0]);
    let y = x.masked_softmax(&[true, true, false]).unwrap().to_vec();
    assert!((y[0] - 0.5).abs() < 1e-12);
    assert!((y[1] - 0.5).abs() < 1e-12);
    assert_eq!(y[2], 0.0);
}

#[test]
fn masked_softmax_matches_direct_exponentiation() {
    // softmax(ln 1, ln 2, ln 3) = (1, 2, 3) / 6 by direct exponentiation.
    let tape = Tape::<f64>::new();
    let x = tape.constant(1, 3, vec![1.0_f64.ln(), 2.0_f64.ln(), 3.0_f64.ln()]);
    let y = x.masked_softmax(&[true, true, true]).unwrap().to_vec();
    let expect = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
    for (a, b) in y.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn masked_softmax_rejects_all_masked_row() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(2, 2, vec![1.0; 4]);
    match x.masked_softmax(&[true, true, false, false]) {
        Err(Error::DegenerateRow { row }) => assert_eq!(row, 1),
        _ => panic!("expected degenerate-row error"),
    }
}

#[test]
fn backward_of_sum_is_ones() {
    let (store, id) = store_with::<f64>("p", 2, 3, vec![0.5; 6]);
    let tape = Tape::new();
    let p = tape.param(&store, id);
    let loss = p.sum();
    let g = tape.backward(&loss, &store).unwrap();
    assert_eq!(g.get(id), &[1.0; 6]);
}

#[test]
fn backward_of_dot_is_twice_input() {
    // d/dp (p . p) = 2p, from the analytic derivative.
    let (store, id) = store_with::<f64>("p", 1, 3, vec![1.0, 2.0, 3.0]);
    let tape = Tape::new();
    let p = tape.param(&store, id);
    let loss = p.dot(&p).unwrap();
    assert_eq!(loss.scalar().unwrap(), 14.0);
    let g = tape.backward(&loss, &store).unwrap();
    assert_eq!(g.get(id), &[2.0, 4.0, 6.0]);
}

#[test]
fn unused_parameter_gets_exact_zeros() {
    let mut store = ParamStore::<f64>::new();
    let used = store.add("used", 1, 2, vec![1.0, 2.0]);
    let unused = store.add("unused", 2, 2, vec![1.0; 4]);
    let tape = Tape::new();
    let p = tape.param(&store, used);
    let loss = p.sum();
    let g = tape.backward(&loss, &store).unwrap();
    assert_eq!(g.get(unused), &[0.0; 4]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let (store, id) = store_with::<f32>("p", 1, 2, vec![1.0, 2.0]);
    let tape = Tape::new();
    let p = tape.param(&store, id);
    assert!(matches!(tape.backward(&p, &store), Err(Error::Contract(_))));
}

#[test]
fn staging_twice_accumulates_additively() {
    // loss = sum(p) + sum(p) -> gradient 2 everywhere.
    let (store, id) = store_with::<f64>("p", 1, 3, vec![0.0; 3]);
    let tape = Tape::new();
    let a = tape.param(&store, id);
    let b = tape.param(&store, id);
    let loss = a.sum().add(&b.sum()).unwrap();
    let g = tape.backward(&loss, &store).unwrap();
    assert_eq!(g.get(id), &[2.0; 3]);
}

#[test]
fn finite_difference_on_quadratic_is_tight() {
    let (mut store, id) = store_with::<f64>("p", 1, 4, vec![0.3, -1.2, 2.0, 0.7]);
    let report = finite_difference_check(
        &mut store,
        |tape, s| {
            let p = tape.param(s, id);
            p.dot(&p)
        },
        &FdOptions { step: 1e-5, ..Default::default() },
    )
    .unwrap();
    assert!(report.worst < 1e-8, "worst rel err {}", report.worst);
}

#[test]
fn finite_difference_on_zero_function_is_zero() {
    let (mut store, id) = store_with::<f64>("p", 1, 3, vec![1.0, 2.0, 3.0]);
    let report = finite_difference_check(
        &mut store,
        |tape, s| {
            let p = tape.param(s, id);
            Ok(p.scale(0.0).sum())
        },
        &FdOptions::default(),
    )
    .unwrap();
    assert_eq!(report.worst, 0.0);
}

#[test]
fn finite_difference_skips_frozen_rows() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("emb", 2, 2, vec![0.0, 0.0, 1.0, 2.0]);
    store.freeze_row(id, 0);
    let report = finite_difference_check(
        &mut store,
        |tape, s| {
            let p = tape.param(s, id);
            // Row 0 enters the loss, but as a frozen row it is not a
            // trainable coordinate.
            Ok(p.sum())
        },
        &FdOptions::default(),
    )
    .unwrap();
    assert_eq!(report.per_param[0].checked, 2);
    assert!(report.worst < 1e-9);
}

#[test]
fn dropout_identity_cases() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(2, 3, vec![1.0, -2.0, 3.0, 4.0, -5.0, 6.0]);
    let mut r = rng::chacha(1);
    let y = x.dropout(0.0, true, &mut r).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
    let y = x.dropout(0.9, false, &mut r).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn dropout_rejects_rate_one() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(1, 1, vec![1.0]);
    let mut r = rng::chacha(1);
    assert!(matches!(x.dropout(1.0, true, &mut r), Err(Error::Config(_))));
}

#[test]
fn dropout_survival_fraction_monte_carlo() {
    // With rate 0.2 over 1e6 elements the surviving fraction
    // concentrates around 0.8.
    let n = 1_000_000;
    let tape = Tape::<f32>::new();
    let x = tape.constant(1, n, vec![1.0; n]);
    let mut r = rng::chacha(42);
    let y = x.dropout(0.2, true, &mut r).unwrap();
    let survivors = y.to_vec().iter().filter(|&&v| v != 0.0).count();
    let frac = survivors as f64 / n as f64;
    assert!((frac - 0.8).abs() < 0.002, "surviving fraction {frac}");
    // Survivors are scaled by 1/(1-rate).
    let kept = y.to_vec().into_iter().find(|&v| v != 0.0).unwrap();
    assert!((kept - 1.25).abs() < 1e-6);
}

#[test]
fn composite_graph_matches_finite_differences() {
    // Exercises matmul, gather, add_row, tanh, masked softmax,
    // log-sum-exp, concat and transpose in one loss.
    let mut r = rng::chacha(7);
    let mut store = ParamStore::<f64>::new();
    let table = store.add("table", 5, 3, (0..15).map(|_| r.gen_range(-1.0..1.0)).collect());
    let w = store.add("w", 3, 4, (0..12).map(|_| r.gen_range(-1.0..1.0)).collect());
    let b = store.add("b", 1, 4, (0..4).map(|_| r.gen_range(-1.0..1.0)).collect());
    let q = store.add("q", 4, 1, (0..4).map(|_| r.gen_range(-1.0..1.0)).collect());

    let build = |tape: &Tape<f64>, s: &ParamStore<f64>| {
        let t = tape.param(s, table);
        let w = tape.param(s, w);
        let b = tape.param(s, b);
        let q = tape.param(s, q);
        let rows = t.gather(&[0, 2, 4, 2])?;
        let h = rows.matmul(&w)?.add_row(&b)?.tanh();
        let logits = h.matmul(&q)?.transpose();
        let attn = logits.masked_softmax(&[true, true, false, true])?;
        let pooled = attn.matmul(&rows)?;
        let both = tape.concat_cols(&[pooled.clone(), pooled.scale(0.5)])?;
        let lse = both.log_sum_exp();
        lse.sum().sub(&pooled.sum())
    };

    let report = finite_difference_check(
        &mut store,
        build,
        &FdOptions { step: 1e-5, ..Default::default() },
    )
    .unwrap();
    assert!(report.worst < 1e-6, "worst rel err {}", report.worst);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_f32(logits in proptest::collection::vec(-30.0f32..30.0, 12)) {
        let tape = Tape::<f32>::new();
        let x = tape.constant(3, 4, logits);
        let mask = [true, false, true, true,
                    true, true, true, true,
                    false, false, true, false];
        let y = x.masked_softmax(&mask).unwrap().to_vec();
        for i in 0..3 {
            let s: f32 = y[i * 4..(i + 1) * 4].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        for (v, m) in y.iter().zip(mask) {
            if !m {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn matmul_is_associative(seed in 0u64..1000) {
        let mut r = rng::chacha(seed);
        let tape = Tape::<f32>::new();
        let a = tape.constant(3, 4, (0..12).map(|_| r.gen_range(-2.0..2.0)).collect());
        let b = tape.constant(4, 2, (0..8).map(|_| r.gen_range(-2.0..2.0)).collect());
        let c = tape.constant(2, 5, (0..10).map(|_| r.gen_range(-2.0..2.0)).collect());
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap().to_vec();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap().to_vec();
        for (l, rr) in left.iter().zip(&right) {
            let scale = l.abs().max(rr.abs()).max(1.0);
            prop_assert!((l - rr).abs() / scale < 1e-4);
        }
    }

    #[test]
    fn dropout_at_inference_is_bitwise_identity(seed in 0u64..100) {
        let mut r = rng::chacha(seed);
        let vals: Vec<f32> = (0..32).map(|_| r.gen_range(-5.0..5.0)).collect();
        let tape = Tape::<f32>::new();
        let x = tape.constant(4, 8, vals.clone());
        let y = x.dropout(0.5, false, &mut r).unwrap();
        prop_assert_eq!(y.to_vec(), vals);
    }

    #[test]
    fn random_attention_loss_passes_gradcheck_f32(seed in 0u64..20) {
        // 32-bit gradients stay within 1e-3 of central differences.
        let mut r = rng::chacha(seed);
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", 3, 3, (0..9).map(|_| r.gen_range(-0.5..0.5)).collect());
        let v = store.add("v", 1, 3, (0..3).map(|_| r.gen_range(-0.5..0.5)).collect());
        let report = finite_difference_check(
            &mut store,
            |tape, s| {
                let w = tape.param(s, w);
                let v = tape.param(s, v);
                let h = v.matmul(&w)?.tanh();
                let sm = h.masked_softmax(&[true, true, true])?;
                sm.dot(&h)
            },
            &FdOptions { step: 5e-3, denom_floor: 1e-2, ..Default::default() },
        ).unwrap();
        prop_assert!(report.worst < 1e-3, "worst {}", report.worst);
    }
}
