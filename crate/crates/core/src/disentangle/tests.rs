use proptest::prelude::*;

use super::*;
use crate::diffcore::grad_check;

fn store_with(latent: usize, hidden: usize, seed: u64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let cfg = DisentangleConfig {
        latent,
        ..Default::default()
    };
    cfg.init_params(&mut store, hidden, &mut RngStream::new(seed)).unwrap();
    store
}

fn set(store: &mut ParamStore<f64>, name: &str, values: Vec<f64>) {
    store.get_mut(name).unwrap().data_mut().copy_from_slice(&values);
}

fn dense_oracle(w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let mut acc = b.data()[i];
            for j in 0..w.cols() {
                acc += w.at(i, j) * x[j];
            }
            acc
        })
        .collect()
}

#[test]
fn text_projection_identity_block() {
    let mut store = store_with(3, 5, 0);
    let mut w = vec![0.0; 15];
    for i in 0..3 {
        w[i * 5 + i] = 1.0;
    }
    set(&mut store, "disentangle.text.w", w);
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::column(vec![1.0, 0.0, 0.0, 0.0, 0.0]));
    let sp = project_text(&mut g, &store, s).unwrap();
    assert_eq!(g.value(sp).data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn text_projection_constant_bias() {
    let mut store = store_with(4, 3, 0);
    set(&mut store, "disentangle.text.w", vec![0.0; 12]);
    set(&mut store, "disentangle.text.b", vec![2.5; 4]);
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::column(vec![0.3, -7.0, 1.0]));
    let sp = project_text(&mut g, &store, s).unwrap();
    assert_eq!(g.value(sp).data(), &[2.5; 4]);
}

#[test]
fn text_projection_matches_dense_oracle() {
    let mut store = store_with(6, 8, 11);
    let mut rng = RngStream::new(5);
    let b: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    set(&mut store, "disentangle.text.b", b);
    let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::column(x.clone()));
    let sp = project_text(&mut g, &store, s).unwrap();
    let expect = dense_oracle(
        store.get("disentangle.text.w").unwrap(),
        store.get("disentangle.text.b").unwrap(),
        &x,
    );
    for (a, e) in g.value(sp).data().iter().zip(expect) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn projection_dimension_mismatch() {
    let store = store_with(4, 3, 0);
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::column(vec![1.0; 5]));
    assert!(matches!(project_text(&mut g, &store, s), Err(Error::Shape { .. })));
    assert!(matches!(project_visual(&mut g, &store, s), Err(Error::Shape { .. })));
}

#[test]
fn gumbel_of_half() {
    let expect = -(std::f64::consts::LN_2.ln());
    assert_eq!(gumbel_from_uniform(0.5f64), expect);
    assert!((gumbel_from_uniform(0.5f64) - 0.366_512_920_581_664_3).abs() < 1e-15);
}

#[test]
fn equal_logits_equal_noise_is_uniform() {
    let mut g = Graph::<f64>::new();
    let sp = g.constant(Tensor::column(vec![0.7; 5]));
    let z = gumbel_sample_with(&mut g, sp, 1.0, &[0.2; 5]).unwrap();
    for &p in g.value(z).data() {
        assert!((p - 0.2).abs() <= 1e-12);
    }
}

#[test]
fn gumbel_sample_replays_uniform_draws() {
    let seed = 1234;
    let mut g = Graph::<f64>::new();
    let sp = g.constant(Tensor::column(vec![2.0, 0.0, 0.0]));
    let z = gumbel_sample(&mut g, sp, 1.0, &mut RngStream::new(seed)).unwrap();

    // scalar replay of the same uniform draws
    let mut rng = RngStream::new(seed);
    let logits = [2.0, 0.0, 0.0];
    let perturbed: Vec<f64> = logits
        .iter()
        .map(|l| {
            let u = rng.uniform_open();
            l + -(-(u.ln())).ln()
        })
        .collect();
    let m = perturbed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = perturbed.iter().map(|p| (p - m).exp()).sum();
    for (a, p) in g.value(z).data().iter().zip(&perturbed) {
        assert!((a - (p - m).exp() / total).abs() < 1e-15);
    }
}

#[test]
fn invalid_temperature_rejected() {
    let mut g = Graph::<f64>::new();
    let sp = g.constant(Tensor::column(vec![0.0, 0.0]));
    assert!(gumbel_sample_with(&mut g, sp, 0.0, &[0.0, 0.0]).is_err());
    assert!(DisentangleConfig {
        latent: 1,
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn st_onehot_picks_argmax_with_low_index_ties() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::column(vec![0.1, 0.7, 0.2]));
    let l = st_onehot(&mut g, z, Selection::ArgMax).unwrap();
    assert_eq!(g.value(l).data(), &[0.0, 1.0, 0.0]);
    let z = g.constant(Tensor::column(vec![0.5, 0.5]));
    let l = st_onehot(&mut g, z, Selection::ArgMax).unwrap();
    assert_eq!(g.value(l).data(), &[1.0, 0.0]);
    let z = g.constant(Tensor::column(vec![0.1, 0.7, 0.2]));
    let l = st_onehot(&mut g, z, Selection::ArgMin).unwrap();
    assert_eq!(g.value(l).data(), &[1.0, 0.0, 0.0]);
}

/// Gradient of the matching loss with respect to `s_p`, with `l_s` either the
/// straight-through one-hot or the relaxed sample itself.
fn text_path_grad(sp: &[f64], noise: &[f64], v: &[f64], straight_through: bool) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let sp = g.input(Tensor::column(sp.to_vec()));
    let z = gumbel_sample_with(&mut g, sp, 0.7, noise).unwrap();
    let l = if straight_through {
        st_onehot(&mut g, z, Selection::ArgMax).unwrap()
    } else {
        z
    };
    let v = g.constant(Tensor::column(v.to_vec()));
    let loss = matching_loss(&mut g, l, v).unwrap();
    g.backward(loss).unwrap();
    g.grad(sp).unwrap().to_vec()
}

#[test]
fn straight_through_gradient_equals_soft_path() {
    let sp = [0.4, -1.0, 2.2, 0.1];
    let noise = [0.3, -0.2, 0.9, 1.4];
    let v = [0.2, 0.6, 0.9, 0.1];
    let st = text_path_grad(&sp, &noise, &v, true);
    let soft = text_path_grad(&sp, &noise, &v, false);
    assert_eq!(
        st.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        soft.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert!(st.iter().any(|&x| x != 0.0));
}

#[test]
fn visual_projection_limits() {
    let mut store = store_with(4, 3, 2);
    set(&mut store, "disentangle.visual.w", vec![0.0; 12]);
    let mut g = Graph::<f64>::new();
    let v = g.constant(Tensor::column(vec![1.0, -2.0, 3.0]));
    let vp = project_visual(&mut g, &store, v).unwrap();
    assert_eq!(g.value(vp).data(), &[0.5; 4]);

    set(&mut store, "disentangle.visual.b", vec![20.0, 0.0, 0.0, 0.0]);
    let mut g = Graph::<f64>::new();
    let v = g.constant(Tensor::column(vec![1.0, -2.0, 3.0]));
    let vp = project_visual(&mut g, &store, v).unwrap();
    assert!((g.value(vp).data()[0] - 1.0).abs() < 1e-8);
}

#[test]
fn visual_projection_matches_logistic_oracle() {
    let mut store = store_with(5, 7, 3);
    let mut rng = RngStream::new(9);
    set(&mut store, "disentangle.visual.b", (0..5).map(|_| rng.normal()).collect());
    let x: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
    let mut g = Graph::<f64>::new();
    let v = g.constant(Tensor::column(x.clone()));
    let vp = project_visual(&mut g, &store, v).unwrap();
    let logits = dense_oracle(
        store.get("disentangle.visual.w").unwrap(),
        store.get("disentangle.visual.b").unwrap(),
        &x,
    );
    for (a, l) in g.value(vp).data().iter().zip(logits) {
        let e = 1.0 / (1.0 + (-l).exp());
        assert!((a - e).abs() < 1e-12);
        assert!(*a > 0.0 && *a < 1.0);
    }
}

#[test]
fn matching_loss_closed_forms() {
    let eps = 1e-12;
    let l = [0.0, 1.0, 0.0, 0.0];
    let v = [eps, 1.0 - eps, eps, eps];
    assert!(matching_loss_value(&l, &v).unwrap() < 1e-10);
    // exact 0/1 entries are clamped rather than rejected
    let v_exact = [0.0, 1.0, 0.0, 0.0];
    assert!(matching_loss_value(&l, &v_exact).unwrap() < 1e-10);

    let loss = matching_loss_value(&l, &[0.5; 4]).unwrap();
    assert!((loss - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((loss - 2.7726).abs() < 1e-4);
}

#[test]
fn matching_loss_graph_matches_scalar_oracle() {
    let mut rng = RngStream::new(77);
    for _ in 0..50 {
        let k = 2 + rng.index(6);
        let hot = rng.index(k);
        let l: Vec<f64> = (0..k).map(|i| if i == hot { 1.0 } else { 0.0 }).collect();
        let v: Vec<f64> = (0..k).map(|_| rng.uniform_open()).collect();
        let mut oracle = 0.0;
        for i in 0..k {
            oracle -= l[i] * v[i].ln() + (1.0 - l[i]) * (1.0 - v[i]).ln();
        }
        let mut g = Graph::<f64>::new();
        let lv = g.constant(Tensor::column(l.clone()));
        let vv = g.constant(Tensor::column(v.clone()));
        let loss = matching_loss(&mut g, lv, vv).unwrap();
        let got = g.value(loss).item().unwrap();
        assert!((got - oracle).abs() < 1e-12 * oracle.max(1.0));
        assert!(got >= 0.0);
    }
}

#[test]
fn matching_loss_gradient_matches_finite_differences() {
    let mut store = ParamStore::new();
    store.insert("v", Tensor::column(vec![0.3, 0.8, 0.45, 0.05])).unwrap();
    let report = grad_check(
        |g, s| {
            let v = g.param(s, "v")?;
            let l = g.constant(Tensor::column(vec![0.0, 1.0, 0.0, 0.0]));
            matching_loss(g, l, v)
        },
        &mut store,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

proptest! {
    #[test]
    fn st_output_is_exactly_one_hot(
        sp in proptest::collection::vec(-5.0f64..5.0, 2..9),
        seed in any::<u64>(),
        tau in 0.05f64..5.0,
    ) {
        let mut g = Graph::<f64>::new();
        let k = sp.len();
        let sp = g.constant(Tensor::column(sp));
        let z = gumbel_sample(&mut g, sp, tau, &mut RngStream::new(seed)).unwrap();
        let l = st_onehot(&mut g, z, Selection::ArgMax).unwrap();
        let v = g.value(l).data();
        prop_assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
        prop_assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), k - 1);
    }

    #[test]
    fn shift_leaves_selection_unchanged(
        sp in proptest::collection::vec(-3.0f64..3.0, 2..8),
        c in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let noise: Vec<f64> = gumbel_noise(&mut RngStream::new(seed), sp.len());
        let pick = |offset: f64| {
            let mut g = Graph::<f64>::new();
            let s = g.constant(Tensor::column(sp.iter().map(|x| x + offset).collect()));
            let z = gumbel_sample_with(&mut g, s, 1.0, &noise).unwrap();
            argmax(g.value(z).data())
        };
        let perturbed: Vec<f64> = sp.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let mut sorted = perturbed.clone();
        sorted.sort_by(f64::total_cmp);
        // skip near-ties where rounding of the shift could reorder
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9));
        prop_assert_eq!(pick(0.0), pick(c));
    }

    #[test]
    fn peak_probability_non_increasing_in_temperature(
        sp in proptest::collection::vec(-3.0f64..3.0, 2..8),
        seed in any::<u64>(),
    ) {
        let noise: Vec<f64> = gumbel_noise(&mut RngStream::new(seed), sp.len());
        let peak = |tau: f64| {
            let mut g = Graph::<f64>::new();
            let s = g.constant(Tensor::column(sp.clone()));
            let z = gumbel_sample_with(&mut g, s, tau, &noise).unwrap();
            g.value(z).data().iter().cloned().fold(0.0, f64::max)
        };
        let peaks: Vec<f64> = [0.1, 0.5, 1.0, 5.0].iter().map(|&t| peak(t)).collect();
        for w in peaks.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15, "{:?}", peaks);
        }
    }

    #[test]
    fn matching_loss_minimized_at_target(
        hot in 0usize..4,
        v in proptest::collection::vec(0.01f64..0.99, 4),
    ) {
        let l: Vec<f64> = (0..4).map(|i| if i == hot { 1.0 } else { 0.0 }).collect();
        let at_target: Vec<f64> = l.iter().map(|&x| if x == 1.0 { 0.999 } else { 0.001 }).collect();
        prop_assert!(matching_loss_value(&l, &at_target).unwrap() < matching_loss_value(&l, &v).unwrap());
        // strict convexity along each coordinate: midpoint lies below the chord
        for k in 0..4 {
            let mut a = v.clone();
            let mut b = v.clone();
            a[k] = 0.05;
            b[k] = 0.95;
            let mut m = v.clone();
            m[k] = 0.5;
            let fa = matching_loss_value(&l, &a).unwrap();
            let fb = matching_loss_value(&l, &b).unwrap();
            let fm = matching_loss_value(&l, &m).unwrap();
            prop_assert!(fm < 0.5 * (fa + fb));
        }
    }
}
