//! Cross-checks of the production code paths against deliberately naive
//! reimplementations: quantile selection by sorting and set arithmetic,
//! descriptors by nested loops, gradients by finite differences.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scribbleseg_core::cloud::{FeatureMatrix, LabelArray, PointCloud, SoftPrediction};
use scribbleseg_core::crb::{self, FrameInput, Strategy};
use scribbleseg_core::eval::{miou, per_class_iou, ConfusionMatrix};
use scribbleseg_core::loss::{consistency_loss, supervised_loss};
use scribbleseg_core::model::Mlp;
use scribbleseg_core::pls::{self, PlsConfig};
use scribbleseg_core::CylGridSpec;

/// Random frame with distinct top-1 confidences: positions spread over the
/// plane, every point unlabeled, argmax class chosen at random.
fn random_confidence_frame(
    rng: &mut ChaCha8Rng,
    n: usize,
    classes: usize,
) -> (PointCloud, SoftPrediction, Vec<bool>) {
    let mut cloud = PointCloud::new(0);
    let mut probs = Vec::with_capacity(n * classes);
    let mut seen = BTreeSet::new();
    for _ in 0..n {
        let r = rng.random::<f64>() * 60.0 + 0.5;
        let phi = rng.random::<f64>() * std::f64::consts::TAU;
        cloud.push(
            (r * phi.cos()) as f32,
            (r * phi.sin()) as f32,
            rng.random::<f64>() as f32,
            0.5,
        );
        let top = rng.random_range(0..classes);
        // Strictly above 1/classes so the argmax is unique, and globally
        // distinct so per-cell counts are exact.
        let conf = loop {
            let v = 1.0 / classes as f64 + rng.random::<f64>() * (1.0 - 1.0 / classes as f64) * 0.999;
            if seen.insert(v.to_bits()) {
                break v;
            }
        };
        let rest = (1.0 - conf) / (classes - 1) as f64;
        for c in 0..classes {
            probs.push(if c == top { conf } else { rest });
        }
    }
    let unlabeled = vec![true; n];
    (cloud, SoftPrediction::from_rows(classes, probs), unlabeled)
}

/// Brute-force pseudo-label selection: recompute argmax and annulus with
/// plain loops, bucket, sort descending and keep the strict top set above
/// the element at floor(beta * len) (clamped).
fn brute_force_crb(
    cloud: &PointCloud,
    pred: &SoftPrediction,
    beta: f64,
    annuli: usize,
) -> BTreeSet<(usize, u16)> {
    let n = cloud.len();
    let mut max_range = 0.0f64;
    for i in 0..n {
        let x = cloud.xs()[i] as f64;
        let y = cloud.ys()[i] as f64;
        max_range = max_range.max((x * x + y * y).sqrt());
    }
    let width = max_range / annuli as f64;
    let mut cells: BTreeMap<(u16, usize), Vec<(f64, usize)>> = BTreeMap::new();
    let mut info = Vec::with_capacity(n);
    for i in 0..n {
        let row = pred.row(i);
        let mut best = 0usize;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        let class = best as u16 + 1;
        let x = cloud.xs()[i] as f64;
        let y = cloud.ys()[i] as f64;
        let ring = (((x * x + y * y).sqrt() / width).floor() as usize).min(annuli - 1);
        cells.entry((class, ring)).or_default().push((row[best], i));
        info.push((class, ring, row[best]));
    }
    let mut selected = BTreeSet::new();
    for ((class, _ring), mut members) in cells {
        members.sort_by(|a, b| b.0.total_cmp(&a.0));
        let idx = ((beta * members.len() as f64).floor() as usize).min(members.len() - 1);
        let cut = members[idx].0;
        for &(conf, i) in &members {
            if conf > cut {
                selected.insert((i, class));
            }
        }
    }
    // Sanity: every selection agrees with the per-point info table.
    for &(i, class) in &selected {
        assert_eq!(info[i].0, class);
    }
    selected
}

#[test]
fn crb_matches_sort_and_count_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    for &beta in &[0.3, 0.5, 0.7] {
        let (cloud, pred, unlabeled) = random_confidence_frame(&mut rng, 600, 5);
        let frames = [FrameInput {
            cloud: &cloud,
            pred: &pred,
            unlabeled: &unlabeled,
        }];
        let set = crb::generate(Strategy::Crb, &frames, beta, 8, None).unwrap();
        let got: BTreeSet<(usize, u16)> = set.frames[0].entries().iter().copied().collect();
        let want = brute_force_crb(&cloud, &pred, beta, 8);
        assert_eq!(got, want, "beta {beta}");
    }
}

#[test]
fn crb_per_cell_counts_hit_the_quantile_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(402);
    let (cloud, pred, unlabeled) = random_confidence_frame(&mut rng, 800, 4);
    let beta = 0.5;
    let annuli = 6;
    let store = crb::collect_frame(&cloud, &pred, &unlabeled, annuli, None).unwrap();
    let table = crb::determine_thresholds(&store, beta);
    let labels = crb::solve_frame(&cloud, &pred, &unlabeled, &table, None).unwrap();
    // Group the selections back into cells and compare against floor(beta*len).
    let spec_width = cloud.max_planar_range().unwrap() / annuli as f64;
    let mut got: BTreeMap<(u16, usize), usize> = BTreeMap::new();
    for &(i, class) in labels.entries() {
        let ring = ((cloud.planar_range(i) / spec_width).floor() as usize).min(annuli - 1);
        *got.entry((class, ring)).or_default() += 1;
    }
    for class in 1..=4u16 {
        for ring in 0..annuli {
            let len = store.cell(class, ring).len();
            let expected = if len == 0 {
                0
            } else {
                ((beta * len as f64).floor() as usize).min(len - 1)
            };
            assert_eq!(
                got.get(&(class, ring)).copied().unwrap_or(0),
                expected,
                "cell ({class}, {ring}) of {len}"
            );
        }
    }
}

/// Nested-loop descriptor oracle: for each point, count labels per class
/// among all points sharing its cell, then normalize by the cell maximum.
fn brute_force_pls(
    cloud: &PointCloud,
    labels: &LabelArray,
    grid: &CylGridSpec,
    classes: usize,
) -> Vec<f64> {
    let n = cloud.len();
    let levels = grid.levels();
    let mut out = vec![0.0; n * levels * classes];
    for i in 0..n {
        let xi = cloud.xs()[i] as f64;
        let yi = cloud.ys()[i] as f64;
        for l in 0..levels {
            let cell_i = grid.cell_of_point(l, xi, yi);
            let mut counts = vec![0u64; classes];
            for j in 0..n {
                if labels.get(j) == 0 {
                    continue;
                }
                let xj = cloud.xs()[j] as f64;
                let yj = cloud.ys()[j] as f64;
                if grid.cell_of_point(l, xj, yj) == cell_i {
                    counts[labels.get(j) as usize - 1] += 1;
                }
            }
            let max = counts.iter().copied().max().unwrap();
            if max > 0 {
                for c in 0..classes {
                    out[i * levels * classes + l * classes + c] = counts[c] as f64 / max as f64;
                }
            }
        }
    }
    out
}

#[test]
fn pls_matches_nested_loop_oracle_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(403);
    for round in 0..20 {
        let classes = rng.random_range(2..6);
        let n = rng.random_range(1..40);
        let levels = rng.random_range(1..4);
        let resolutions: Vec<(usize, usize)> = (0..levels)
            .map(|l| (2 << l, 3 << l))
            .collect();
        let grid = CylGridSpec::new(resolutions, 30.0);
        let mut cloud = PointCloud::new(0);
        let mut lab = Vec::new();
        for _ in 0..n {
            cloud.push(
                (rng.random::<f64>() * 90.0 - 45.0) as f32,
                (rng.random::<f64>() * 90.0 - 45.0) as f32,
                rng.random::<f32>(),
                rng.random::<f32>(),
            );
            lab.push(rng.random_range(0..=classes) as u16);
        }
        let labels = LabelArray::new(lab);
        let cfg = PlsConfig::new(grid.clone(), classes);
        let pyr = pls::build_histograms(&cloud, &labels, &cfg);
        let got = pls::compute_pls(&cloud, &pyr, &cfg);
        let want = brute_force_pls(&cloud, &labels, &grid, classes);
        assert_eq!(got.data(), want.as_slice(), "round {round}");
    }
}

#[test]
fn miou_matches_set_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for round in 0..40 {
        let classes = rng.random_range(2..7);
        let n = rng.random_range(1..200);
        let gt: Vec<u16> = (0..n).map(|_| rng.random_range(0..=classes) as u16).collect();
        let pred: Vec<u16> = (0..n).map(|_| rng.random_range(1..=classes) as u16).collect();
        let mut m = ConfusionMatrix::new(classes);
        m.add_frame(&LabelArray::new(gt.clone()), &LabelArray::new(pred.clone()))
            .unwrap();
        // Oracle: per class, intersection and union as explicit index sets
        // over points with ground truth.
        let mut expected = Vec::new();
        for c in 1..=classes as u16 {
            let a: BTreeSet<usize> = (0..n).filter(|&i| gt[i] == c).collect();
            let b: BTreeSet<usize> = (0..n).filter(|&i| pred[i] == c && gt[i] != 0).collect();
            let union = a.union(&b).count();
            let inter = a.intersection(&b).count();
            expected.push((union > 0).then(|| inter as f64 / union as f64));
        }
        assert_eq!(per_class_iou(&m), expected, "round {round}");
        let present: Vec<f64> = expected.iter().copied().flatten().collect();
        if !present.is_empty() {
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            assert_eq!(miou(&m).unwrap(), mean, "round {round}");
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Independent forward pass over the documented flat parameter layout
/// (per layer: row-major weights, then biases). Returns the smallest
/// absolute hidden pre-activation, used to reject configurations where a
/// finite difference would straddle the ReLU kink and measure a
/// half-gradient that no analytic answer could match.
fn min_abs_hidden_preact(model: &Mlp, dims: &[usize], feats: &FeatureMatrix) -> f64 {
    let params = model.params_flat();
    let mut offset = 0;
    let mut layers: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let wts = params[offset..offset + fan_in * fan_out].to_vec();
        offset += fan_in * fan_out;
        let bs = params[offset..offset + fan_out].to_vec();
        offset += fan_out;
        layers.push((wts, bs));
    }
    assert_eq!(offset, params.len());
    let mut min_abs = f64::INFINITY;
    for i in 0..feats.rows() {
        let mut act: Vec<f64> = feats.row(i).to_vec();
        for (li, (wts, bs)) in layers.iter().enumerate() {
            let fan_in = act.len();
            let z: Vec<f64> = (0..bs.len())
                .map(|o| {
                    let mut acc = bs[o];
                    for k in 0..fan_in {
                        acc += wts[o * fan_in + k] * act[k];
                    }
                    acc
                })
                .collect();
            if li < layers.len() - 1 {
                for &v in &z {
                    min_abs = min_abs.min(v.abs());
                }
                act = z.iter().map(|&v| v.max(0.0)).collect();
            } else {
                act = z;
            }
        }
    }
    min_abs
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let mut round = 0u32;
    let mut attempt = 0u64;
    while round < 30 {
        attempt += 1;
        let input = rng.random_range(3..6);
        let h1 = rng.random_range(4..8);
        let h2 = rng.random_range(3..7);
        let classes = rng.random_range(2..5);
        let n = rng.random_range(2..5);
        let model = Mlp::new(input, &[h1, h2], classes, 500 + attempt);
        let feats = FeatureMatrix::from_data(
            n,
            input,
            (0..n * input).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        );
        if min_abs_hidden_preact(&model, &[input, h1, h2, classes], &feats) < 1e-4 {
            continue; // finite differences are invalid at the ReLU kink
        }
        // Random labels with at least one labeled point.
        let labels: Vec<u16> = loop {
            let l: Vec<u16> = (0..n).map(|_| rng.random_range(0..=classes) as u16).collect();
            if l.iter().any(|&v| v != 0) {
                break l;
            }
        };
        let labels = LabelArray::new(labels);
        let (mask, _) = labels.split_supervision();
        // Fixed random teacher distribution rows for the consistency side.
        let tprobs: Vec<f64> = {
            let mut v = Vec::with_capacity(n * classes);
            for _ in 0..n {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = raw.iter().sum();
                v.extend(raw.iter().map(|r| r / s));
            }
            v
        };
        let teacher = SoftPrediction::from_rows(classes, tprobs);
        let all = vec![true; n];

        for mode in 0..2 {
            let loss_of = |m: &Mlp| -> f64 {
                let p = m.forward(&feats).unwrap();
                if mode == 0 {
                    supervised_loss(&p, &labels, &mask).unwrap().loss
                } else {
                    consistency_loss(&p, &teacher, &all).unwrap().loss
                }
            };
            let (pred, trace) = model.forward_trace(&feats).unwrap();
            let lg = if mode == 0 {
                supervised_loss(&pred, &labels, &mask).unwrap()
            } else {
                consistency_loss(&pred, &teacher, &all).unwrap()
            };
            let analytic = model.backward(&feats, &trace, &lg.dlogits).flat();
            let params = model.params_flat();
            let eps = 1e-6;
            let mut numeric = Vec::with_capacity(params.len());
            for k in 0..params.len() {
                let mut plus = params.clone();
                plus[k] += eps;
                let mut minus = params.clone();
                minus[k] -= eps;
                let mut mp = model.clone();
                mp.set_params_flat(&plus);
                let mut mm = model.clone();
                mm.set_params_flat(&minus);
                numeric.push((loss_of(&mp) - loss_of(&mm)) / (2.0 * eps));
            }
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&numeric).max(norm(&analytic)).max(1e-12);
            assert!(rel <= 1e-4, "round {round} mode {mode}: relative error {rel}");
        }
        round += 1;
    }
}

#[test]
fn consistency_gradient_vanishes_on_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(406);
    for round in 0..10 {
        let classes = rng.random_range(2..6);
        let n = rng.random_range(1..5);
        let model = Mlp::new(4, &[6], classes, 600 + round);
        let feats = FeatureMatrix::from_data(
            n,
            4,
            (0..n * 4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        );
        let pred = model.forward(&feats).unwrap();
        let all = vec![true; n];
        // Teacher identical to student: gradient must vanish identically.
        let lg = consistency_loss(&pred, &pred, &all).unwrap();
        assert!(lg.dlogits.iter().all(|&g| g.abs() <= 1e-12));
    }
}
