use bcam::data::{generate_indexed, generate_split, DatasetConfig, Split};
use bcam::engine::{grad_check, sgd_step, OptimConfig, PadMode, ParamSet, Tape, Tensor, Var};
use bcam::losses::{stagger_classification_loss, weighted_sum, ImageLabel, LossWeights};
use bcam::metrics::boxes::{box_iou_table, mba_from_table};
use bcam::metrics::{
    largest_connected_component, normalize_map, piou, pxap, threshold_mask, Box as BBox,
    ThresholdGrid,
};
use bcam::model::{
    aggregate, binary_mask, checkpoint, extract_features, gap, BackboneConfig, Forward, Model,
    ModelConfig, ScoreSet, Variant,
};
use bcam::trainer::{evaluate, train, train_model, TrainConfig};
use bcam::Result;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Values bounded away from zero, either sign.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.05..1.5);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced 0.1 apart in random order.
fn distinct(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.05 * n as f64).collect();
    v.shuffle(r);
    Tensor::new(shape, v).unwrap()
}

/// Gradient check of `f` reduced to a scalar by a fixed random projection.
fn check_op<F>(seed: u64, inputs: Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = f(&mut probe, &vars).unwrap();
    let weights = uniform(&mut rng(seed ^ 0xABCD), probe.shape(out), -1.0, 1.0);
    grad_check(
        |t, v| {
            let y = f(t, v)?;
            let w = t.constant(weights.clone());
            let p = t.mul(y, w)?;
            t.sum(p, None)
        },
        &inputs,
        EPS,
    )
    .unwrap()
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn matmul_gradients(seed: u64, m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &[m, k], -1.0, 1.0);
        let b = uniform(&mut r, &[k, n], -1.0, 1.0);
        prop_assert!(check_op(seed, vec![a, b], |t, v| t.matmul(v[0], v[1])) <= TOL);
    }

    #[test]
    fn conv2d_gradients(
        seed: u64,
        c_in in 1usize..3,
        c_out in 1usize..3,
        out_h in 1usize..4,
        out_w in 1usize..4,
        big_kernel: bool,
        stride in 1usize..3,
        padding in 0usize..2,
        replicate: bool,
    ) {
        let mut r = rng(seed);
        let k = if big_kernel { 3 } else { 1 };
        // input sizes that give an integral output grid
        let h = ((out_h - 1) * stride + k) as isize - 2 * padding as isize;
        let w = ((out_w - 1) * stride + k) as isize - 2 * padding as isize;
        prop_assume!(h >= 1 && w >= 1);
        let (h, w) = (h as usize, w as usize);
        let mode = if replicate { PadMode::Replicate } else { PadMode::Zero };
        let x = uniform(&mut r, &[c_in, h, w], -1.0, 1.0);
        let kernel = uniform(&mut r, &[c_out, c_in, k, k], -1.0, 1.0);
        let err = check_op(seed, vec![x, kernel], |t, v| {
            t.conv2d_padded(v[0], v[1], stride, padding, mode)
        });
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn softmax_gradients(seed: u64, rows in 1usize..4, cols in 1usize..7, log: bool) {
        let x = uniform(&mut rng(seed), &[rows, cols], -3.0, 3.0);
        let err = check_op(seed, vec![x], |t, v| {
            if log { t.log_softmax_rows(v[0]) } else { t.softmax_rows(v[0]) }
        });
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn elementwise_gradients(seed: u64, rows in 1usize..4, cols in 1usize..5, op in 0usize..9) {
        let mut r = rng(seed);
        let shape = [rows, cols];
        let inputs = match op {
            0 => vec![off_zero(&mut r, &shape)],
            4 => vec![uniform(&mut r, &shape, 0.5, 2.0)],
            5..=7 => vec![uniform(&mut r, &shape, -2.0, 2.0), uniform(&mut r, &shape, -2.0, 2.0)],
            _ => vec![uniform(&mut r, &shape, -3.0, 3.0)],
        };
        let err = check_op(seed, inputs, |t, v| match op {
            0 => Ok(t.relu(v[0])),
            1 => Ok(t.sigmoid(v[0])),
            2 => Ok(t.log_sigmoid(v[0])),
            3 => Ok(t.scale(v[0], -1.7)),
            4 => Ok(t.log(v[0])),
            5 => t.add(v[0], v[1]),
            6 => t.sub(v[0], v[1]),
            7 => t.mul(v[0], v[1]),
            _ => t.transpose(v[0]),
        });
        prop_assert!(err <= TOL, "op {op}: {err}");
    }

    #[test]
    fn reduction_gradients(seed: u64, rows in 1usize..4, cols in 1usize..5, axis in 0usize..3, op in 0usize..3) {
        let mut r = rng(seed);
        let x = if op == 2 { distinct(&mut r, &[rows, cols]) } else { uniform(&mut r, &[rows, cols], -1.0, 1.0) };
        let axis = if axis == 2 { None } else { Some(axis) };
        let err = check_op(seed, vec![x], |t, v| match op {
            0 => t.sum(v[0], axis),
            1 => t.mean(v[0], axis),
            _ => t.max(v[0], axis),
        });
        prop_assert!(err <= TOL, "op {op} axis {axis:?}: {err}");
    }

    #[test]
    fn shape_op_gradients(seed: u64, c in 1usize..3, h in 1usize..4, w in 1usize..4) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[c, 2 * h, 2 * w], -1.0, 1.0);
        let b = uniform(&mut r, &[c], -1.0, 1.0);
        let pooled = check_op(seed, vec![x.clone()], |t, v| t.avg_pool2(v[0]));
        let reshaped = check_op(seed, vec![x.clone()], |t, v| t.reshape(v[0], &[2 * h, 2 * w * c]));
        let biased = check_op(seed, vec![x, b], |t, v| t.add_channel_bias(v[0], v[1]));
        prop_assert!(pooled <= TOL && reshaped <= TOL && biased <= TOL);
    }

    #[test]
    fn softmax_rows_normalize_and_ignore_shifts(
        seed: u64,
        rows in 1usize..5,
        cols in 1usize..9,
    ) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[rows, cols], -5.0, 5.0);
        let shifts: Vec<f64> = (0..rows).map(|_| r.random_range(-50.0..50.0)).collect();
        let shifted = Tensor::from_fn(&[rows, cols], |i| x.data()[i] + shifts[i / cols]);
        let mut t = Tape::new();
        let (a, b) = (t.constant(x), t.constant(shifted));
        let (sa, sb) = (t.softmax_rows(a).unwrap(), t.softmax_rows(b).unwrap());
        for row in 0..rows {
            let sum: f64 = t.value(sa).row(row).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }
        prop_assert!(t.value(sa).max_abs_diff(t.value(sb)) <= 1e-9);
    }

    #[test]
    fn pointwise_conv_is_matmul(seed: u64, c_in in 1usize..5, c_out in 1usize..5, h in 1usize..6, w in 1usize..6) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[c_in, h, w], -1.0, 1.0);
        let k = uniform(&mut r, &[c_out, c_in, 1, 1], -1.0, 1.0);
        let flat = k.reshape(&[c_out, c_in]).unwrap().matmul(&x.reshape(&[c_in, h * w]).unwrap()).unwrap();
        let mut t = Tape::new();
        let (xv, kv) = (t.constant(x), t.constant(k));
        let y = t.conv2d(xv, kv, 1, 0).unwrap();
        prop_assert_eq!(t.value(y).data(), flat.data());
    }

    #[test]
    fn plain_sgd_is_gradient_descent(seed: u64, n in 1usize..6, lr in 0.0f64..1.0) {
        let mut r = rng(seed);
        let mut params = ParamSet::new();
        let w0 = uniform(&mut r, &[n], -1.0, 1.0);
        let g = uniform(&mut r, &[n], -1.0, 1.0);
        let id = params.add("w", w0.clone());
        params.get_mut(id).accumulate_grad(&g).unwrap();
        let config = OptimConfig {
            learning_rate: lr,
            momentum: 0.0,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        for _ in 0..2 {
            let before = params.value(id).clone();
            sgd_step(&mut params, &config, 0).unwrap();
            let expected: Vec<f64> = before.data().iter().zip(g.data()).map(|(w, g)| w - lr * g).collect();
            prop_assert_eq!(params.value(id).data(), &expected[..]);
        }
    }
}

fn toy_model(variant: Variant, heads: usize, channels: Vec<usize>, seed: u64) -> Model {
    let config = ModelConfig {
        num_classes: 3,
        heads,
        backbone: BackboneConfig {
            stage_channels: channels,
            ..BackboneConfig::default()
        },
        variant,
    };
    Model::new(config, seed).unwrap()
}

fn random_image(seed: u64, side: usize) -> Tensor {
    uniform(&mut rng(seed), &[3, side, side], 0.0, 1.0)
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn zero_init_aggregates_equal_gap(seed: u64, heads in 1usize..10) {
        let model = toy_model(Variant::Ours3, heads, vec![4, 4, 4], seed);
        let image = random_image(seed, 64);
        let mut t = Tape::new();
        let vars = t.bind(model.params());
        let Forward::Full { features, priors, z_o, z_b, .. } = model.forward(&mut t, &vars, &image).unwrap() else {
            panic!("full model expected");
        };
        prop_assert_eq!(features.positions(), 256);
        let pooled = gap(&mut t, &features).unwrap();
        prop_assert_eq!(t.value(z_o).data(), t.value(z_b).data());
        prop_assert_eq!(t.value(z_o).data(), t.value(pooled).data());
        for a in [priors.object, priors.background] {
            prop_assert!(t.value(a).data().iter().all(|&p| (p - 1.0 / 256.0).abs() <= 1e-12));
        }
    }

    #[test]
    fn extract_features_is_deterministic(seed: u64) {
        let model = toy_model(Variant::Cam, 1, vec![2, 4, 4], seed);
        let image = random_image(seed, 16);
        let run = || {
            let mut t = Tape::new();
            let vars = t.bind(model.params());
            let f = extract_features(&mut t, model.backbone(), &vars, &image).unwrap();
            t.value(f.data).clone()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.data(), b.data());
    }
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn aggregation_and_scoring_commute(
        seed: u64,
        c in 1usize..6,
        n in 1usize..12,
        m in 1usize..5,
        k in 1usize..4,
    ) {
        let mut r = rng(seed);
        let z = uniform(&mut r, &[c, n], -2.0, 2.0);
        let w = uniform(&mut r, &[k, c], -1.0, 1.0);
        let logits = uniform(&mut r, &[m, n], -3.0, 3.0);
        let mut t = Tape::new();
        let zv = t.constant(z.clone());
        let features = bcam::model::FeatureMap { channels: c, height: 1, width: n, data: zv };
        let lv = t.constant(logits);
        let a = t.softmax_rows(lv).unwrap();
        let pooled = aggregate(&mut t, &features, a).unwrap();
        let wv = t.constant(w.clone());
        let lhs = t.matmul(wv, pooled).unwrap();

        let maps = w.matmul(&z).unwrap();
        let av = t.value(a).clone();
        let mean_row: Vec<f64> = (0..n).map(|i| (0..m).map(|h| av.at2(h, i)).sum::<f64>() / m as f64).collect();
        let rhs = maps.matmul(&Tensor::new(&[n, 1], mean_row).unwrap()).unwrap();
        prop_assert!(t.value(lhs).max_abs_diff(&rhs) <= 1e-9);
    }

    #[test]
    fn mask_equals_thresholded_difference(seed: u64, k in 1usize..4, n in 1usize..20) {
        let mut r = rng(seed);
        // a coarse value set makes exact ties common
        let mut draw = |_| r.random_range(-4i32..=4) as f64 * 0.25;
        let s_o = Tensor::from_fn(&[k, n], &mut draw);
        let s_b = Tensor::from_fn(&[k, n], &mut draw);
        let diff: Vec<f64> = s_o.data().iter().zip(s_b.data()).map(|(o, b)| o - b).collect();
        prop_assert_eq!(binary_mask(&s_o, &s_b).unwrap(), threshold_mask(&diff, 0.0));
    }

    #[test]
    fn loss_is_weighted_sum_and_monotone(
        seed: u64,
        k in 2usize..6,
        multi_label: bool,
        bump in 0.01f64..3.0,
    ) {
        let mut r = rng(seed);
        let mut y: Vec<bool> = (0..k).map(|_| multi_label && r.random_bool(0.5)).collect();
        y[r.random_range(0..k)] = true;
        let label = ImageLabel::new(y, multi_label).unwrap();
        let lambdas = [r.random_range(0.1..2.0), r.random_range(0.1..2.0), r.random_range(0.1..2.0), r.random_range(0.1..2.0)];
        let weights = LossWeights::new(lambdas[0], lambdas[1], lambdas[2], lambdas[3]).unwrap();
        let scores: Vec<Tensor> = (0..4).map(|_| uniform(&mut r, &[k, 1], -4.0, 4.0)).collect();
        let target = r.random_range(0..k);

        let eval = |s_ob: &Tensor| {
            let mut t = Tape::new();
            let set = ScoreSet {
                s_oo: t.constant(scores[0].clone()),
                s_bo: t.constant(scores[1].clone()),
                s_ob: t.constant(s_ob.clone()),
                s_bb: t.constant(scores[3].clone()),
            };
            let loss = stagger_classification_loss(&mut t, &set, &label, &weights).unwrap();
            let terms = loss.terms.map(|v| t.value(v).item());
            (t.value(loss.total).item(), terms)
        };
        let (total, terms) = eval(&scores[2]);
        prop_assert_eq!(total, weighted_sum(terms, &weights));
        prop_assert!(terms.iter().all(|&l| l >= 0.0));

        let mut raised = scores[2].clone();
        raised.data_mut()[target] += bump;
        prop_assert!(eval(&raised).0 > total);
    }
}

#[test]
fn priors_stay_row_stochastic_during_training() {
    let data = DatasetConfig {
        num_classes: 3,
        image_size: 16,
        train_samples: 4,
        ..DatasetConfig::default()
    };
    let train_set = generate_split(&data, Split::Train).unwrap();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 2,
        heads: 3,
        backbone: BackboneConfig {
            stage_channels: vec![2, 4, 4],
            ..BackboneConfig::default()
        },
        eval_every: 0,
        optim: OptimConfig {
            learning_rate: 0.05,
            ..OptimConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut model = Model::new(config.model_config(3), 0).unwrap();
    for _ in 0..4 {
        model = train_model(&config, model, &train_set, &[])
            .unwrap()
            .final_model;
        for s in &train_set {
            let mut t = Tape::new();
            let vars = t.bind(model.params());
            let Forward::Full { priors, .. } = model.forward(&mut t, &vars, &s.image).unwrap()
            else {
                panic!("full model expected");
            };
            for a in [priors.object, priors.background] {
                let v = t.value(a);
                for row in 0..v.shape()[0] {
                    let sum: f64 = v.row(row).iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-6, "{sum}");
                }
            }
        }
    }
}

fn small_data(seed: u64, noisy: bool) -> DatasetConfig {
    DatasetConfig {
        num_classes: 4,
        image_size: 16,
        train_samples: 12,
        val_samples: 4,
        test_samples: 6,
        max_objects_per_image: if noisy { 3 } else { 1 },
        noisy_labels: noisy,
        rng_seed: seed,
        ..DatasetConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(16))]

    #[test]
    fn dataset_generation_invariants(seed: u64, noisy: bool) {
        let config = small_data(seed, noisy);
        for split in Split::ALL {
            let a = generate_split(&config, split).unwrap();
            prop_assert_eq!(&a, &generate_split(&config, split).unwrap());
            for s in &a {
                let pixels = s.height() * s.width();
                for i in 0..pixels {
                    prop_assert!(s.masks.iter().filter(|m| m[i]).count() <= 1);
                }
                let present: Vec<bool> = s.masks.iter().map(|m| m.iter().any(|&b| b)).collect();
                prop_assert!(present[s.conspicuous_class]);
                if noisy {
                    let one_hot: Vec<bool> = (0..present.len()).map(|k| k == s.conspicuous_class).collect();
                    prop_assert_eq!(&s.label, &one_hot);
                } else {
                    prop_assert_eq!(&s.label, &present);
                }
            }
        }
        let seeds: std::collections::HashSet<u64> = Split::ALL
            .iter()
            .flat_map(|&split| (0..config.samples(split)).map(move |i| (split, i)))
            .map(|(split, i)| generate_indexed(&config, split, i).unwrap().seed)
            .collect();
        prop_assert_eq!(seeds.len(), 22);
    }
}

#[test]
fn confound_rate_matches_binomial_per_class() {
    for (seed, p) in [(0u64, 0.9), (1, 0.5), (2, 0.2)] {
        let config = DatasetConfig {
            image_size: 16,
            train_samples: 1800,
            p_confound: p,
            rng_seed: seed,
            ..DatasetConfig::default()
        };
        let samples = generate_split(&config, Split::Train).unwrap();
        for k in 0..config.num_classes {
            let of_k: Vec<_> = samples
                .iter()
                .filter(|s| s.conspicuous_class == k)
                .collect();
            let n = of_k.len() as f64;
            assert!(n >= 100.0, "class {k} has only {n} samples");
            let rate = of_k.iter().filter(|s| s.confounded()).count() as f64 / n;
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!(
                (rate - p).abs() <= 3.0 * sigma,
                "class {k}: rate {rate} vs p {p} (3σ = {})",
                3.0 * sigma
            );
        }
    }
}

fn random_mask(r: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<bool> {
    (0..n).map(|_| r.random_bool(density)).collect()
}

/// Coarse-valued map so that ties are frequent.
fn coarse_map(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| r.random_range(0..=10) as f64 / 10.0)
        .collect()
}

fn components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut i = 0;
        while i < comp.len() {
            let (y, x) = ((comp[i] / w) as isize, (comp[i] % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        comp.push(j);
                    }
                }
            }
            i += 1;
        }
        out.push(comp);
    }
    out
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn piou_dominates_its_curve(seed: u64, images in 1usize..5, n in 1usize..30, points in 2usize..30) {
        let mut r = rng(seed);
        let maps: Vec<Vec<f64>> = (0..images).map(|_| normalize_map(&coarse_map(&mut r, n))).collect();
        let gt: Vec<Vec<bool>> = (0..images).map(|_| random_mask(&mut r, n, 0.4)).collect();
        let grid = ThresholdGrid::uniform(points).unwrap();
        let res = piou(&maps, &gt, &grid).unwrap();
        prop_assert_eq!(res.curve.len(), points);
        prop_assert!(res.curve.iter().all(|&(_, v)| res.piou >= v));
        prop_assert!(res.curve.iter().any(|&(tau, v)| v == res.piou && tau == res.tau));
    }

    #[test]
    fn mba_dominates_every_threshold(seed: u64, images in 1usize..5, h in 1usize..7, w in 1usize..7, delta in 0.1f64..0.9) {
        let mut r = rng(seed);
        let maps: Vec<Vec<f64>> = (0..images).map(|_| normalize_map(&coarse_map(&mut r, h * w))).collect();
        let boxes: Vec<BBox> = (0..images)
            .map(|_| {
                let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
                BBox::new(x0, y0, r.random_range(x0..w), r.random_range(y0..h)).unwrap()
            })
            .collect();
        let grid = ThresholdGrid::uniform(11).unwrap();
        let table = box_iou_table(&maps, h, w, &boxes, &grid).unwrap();
        let best = mba_from_table(&table, delta).unwrap();
        for row in &table {
            let acc = row.iter().filter(|&&v| v >= delta).count() as f64 / images as f64;
            prop_assert!(best >= acc);
        }
    }

    #[test]
    fn pxap_ignores_monotone_transforms(seed: u64, images in 1usize..4, n in 1usize..40) {
        let mut r = rng(seed);
        let maps: Vec<Vec<f64>> = (0..images).map(|_| coarse_map(&mut r, n)).collect();
        let mut gt: Vec<Vec<bool>> = (0..images).map(|_| random_mask(&mut r, n, 0.3)).collect();
        gt[0][0] = true;
        let warped: Vec<Vec<f64>> = maps
            .iter()
            .map(|m| m.iter().map(|&v| (3.0 * v).exp() + v * v * v - 7.0).collect())
            .collect();
        prop_assert_eq!(pxap(&maps, &gt).unwrap(), pxap(&warped, &gt).unwrap());
    }

    #[test]
    fn largest_component_is_connected_maximal_subset(seed: u64, h in 1usize..10, w in 1usize..10, density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let mask = random_mask(&mut r, h * w, density);
        let lcc = largest_connected_component(&mask, h, w);
        prop_assert!(lcc.iter().zip(&mask).all(|(&l, &m)| !l || m));
        let comps = components(&lcc, h, w);
        let size = lcc.iter().filter(|&&b| b).count();
        if mask.iter().any(|&b| b) {
            prop_assert_eq!(comps.len(), 1);
            let largest = components(&mask, h, w).iter().map(Vec::len).max().unwrap();
            prop_assert_eq!(size, largest);
        } else {
            prop_assert_eq!(size, 0);
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let data = small_data(3, false);
    let train_set = generate_split(&data, Split::Train).unwrap();
    let test_set = generate_split(&data, Split::Test).unwrap();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        heads: 2,
        backbone: BackboneConfig {
            stage_channels: vec![2, 4, 4],
            ..BackboneConfig::default()
        },
        eval_every: 0,
        ..TrainConfig::default()
    };
    let model = train(&config, &train_set, &[]).unwrap().final_model;
    let grid = ThresholdGrid::uniform(21).unwrap();
    let before = evaluate(&model, &test_set, &grid).unwrap();

    let restored = checkpoint::from_bytes(&checkpoint::to_bytes(&model).unwrap()).unwrap();
    assert_eq!(evaluate(&restored, &test_set, &grid).unwrap(), before);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    checkpoint::save(&model, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(evaluate(&loaded, &test_set, &grid).unwrap(), before);
    assert_eq!(loaded.params().values(), model.params().values());
}
