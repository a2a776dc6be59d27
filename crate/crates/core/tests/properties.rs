use clc_core::acp::acp_forward;
use clc_core::autodiff::{Tape, Tensor};
use clc_core::branches::{consistency_loss, mm_ce_loss, total_mm_loss, uni_modal_loss, Reduction};
use clc_core::cleaner::{select_clean, train_step, TrainConfig};
use clc_core::datasets::{decode_features, encode_features, inject_noise, FeatureSequence};
use clc_core::evaluation::{average_precision, median_filter};
use clc_core::experiment::mean_ap;
use clc_core::evaluation::score_video;
use clc_core::labelgen::{build_training_labels, Provenance, ShotTable};
use clc_core::{ClcModel, ModelConfig};
use proptest::prelude::*;
use std::path::Path;

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn small_model(d_visual: usize, d_model: usize, seed: u64) -> ClcModel {
    ClcModel::new(
        ModelConfig {
            d_visual,
            d_audio: 3,
            d_model,
            hidden: 3,
            cross_propagation: true,
            gate_normalize: false,
        },
        seed,
    )
    .unwrap()
}

/// `(T, visual, audio)` with matching row counts.
fn inputs(d_visual: usize) -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (1usize..7).prop_flat_map(move |t| {
        (
            Just(t),
            prop::collection::vec(-1.5f64..1.5, t * d_visual),
            prop::collection::vec(-1.5f64..1.5, t * 3),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn median_filter_is_monotone(
        pairs in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0), 1..40),
        k in 0usize..5,
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let upper: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let s = median_filter(&y, k);
        let s_upper = median_filter(&upper, k);
        prop_assert!(s.iter().zip(&s_upper).all(|(a, b)| a <= b));
    }

    #[test]
    fn median_filter_fixes_wide_step_functions(
        plateaus in prop::collection::vec(0usize..7, 1..6),
        k in 1usize..4,
        start_high in any::<bool>(),
    ) {
        let mut y = Vec::new();
        let mut level = if start_high { 1.0 } else { 0.0 };
        for extra in plateaus {
            y.extend(std::iter::repeat_n(level, 2 * k + 1 + extra));
            level = 1.0 - level;
        }
        let once = median_filter(&y, k);
        prop_assert_eq!(median_filter(&once, k), once.clone());
        prop_assert_eq!(once, y);
    }

    #[test]
    fn ap_ignores_strictly_increasing_transforms(
        pairs in prop::collection::vec((-8i32..8, 0u8..2), 1..30),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 8.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let base = average_precision(&scores, &labels).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) + 2.0 * s).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
        prop_assert_eq!(average_precision(&cubed, &labels).unwrap(), base);
        prop_assert_eq!(average_precision(&shifted, &labels).unwrap(), base);
        if let Some(ap) = base {
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }

    #[test]
    fn map_ignores_video_order(
        videos in prop::collection::vec(prop::collection::vec((0.0f64..1.0, 0u8..2), 1..20), 1..8),
        rotate in 0usize..8,
    ) {
        let results: Vec<_> = videos
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let raw = v.iter().map(|p| p.0).collect();
                let labels: Vec<u8> = v.iter().map(|p| p.1).collect();
                score_video(&format!("v{i}"), raw, &labels, 0).unwrap()
            })
            .collect();
        let mut moved = results.clone();
        moved.rotate_left(rotate % results.len());
        moved.reverse();
        match (mean_ap(&results), mean_ap(&moved)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn selection_ignores_strictly_increasing_transforms(
        raw in prop::collection::vec(0u32..6, 1..20),
        tau in 0.05f64..1.0,
    ) {
        let losses: Vec<f64> = raw.iter().map(|&v| v as f64 * 0.5).collect();
        let picked = select_clean(&losses, tau).unwrap();
        let logged: Vec<f64> = losses.iter().map(|l| (l + 1.0).ln()).collect();
        let exped: Vec<f64> = losses.iter().map(|l| l.exp() * 3.0 - 2.0).collect();
        prop_assert_eq!(select_clean(&logged, tau).unwrap(), picked.clone());
        prop_assert_eq!(select_clean(&exped, tau).unwrap(), picked);
    }

    #[test]
    fn feature_files_round_trip_bit_exactly(
        videos in prop::collection::vec(
            (1usize..6, 1usize..4, 1usize..4, any::<bool>(), "[a-z0-9_]{1,8}"),
            1..4,
        ),
        seed in any::<u32>(),
    ) {
        let mut state = seed as u64 | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            // stored as single precision
            ((state % 20001) as f32 / 1000.0 - 10.0) as f64
        };
        let seqs: Vec<FeatureSequence> = videos
            .iter()
            .map(|(t, dv, da, labelled, id)| {
                let visual = tensor(*t, *dv, (0..t * dv).map(|_| next()).collect());
                let audio = tensor(*t, *da, (0..t * da).map(|_| next()).collect());
                let labels = labelled.then(|| (0..*t).map(|i| (i % 2) as u8).collect());
                FeatureSequence::new(id.clone(), visual, audio, labels).unwrap()
            })
            .collect();
        let bytes = encode_features(&seqs).unwrap();
        let back = decode_features(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &seqs);
        prop_assert_eq!(encode_features(&back).unwrap(), bytes);
    }

    #[test]
    fn noise_injection_is_deterministic(
        labels in prop::collection::vec(0u8..2, 1..100),
        rho in 0.0f64..0.49,
        dilation in 0usize..4,
        seed in any::<u64>(),
    ) {
        let a = inject_noise(&labels, rho, dilation, seed).unwrap();
        prop_assert_eq!(&a, &inject_noise(&labels, rho, dilation, seed).unwrap());
        prop_assert_eq!(a.len(), labels.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn correlation_maps_are_transposes((t, v, a) in inputs(4), seed in 0u64..50) {
        let model = small_model(4, 4, seed);
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape);
        let vx = tape.constant(tensor(t, 4, v));
        let ax = tape.constant(tensor(t, 3, a));
        let out = acp_forward(&mut tape, &b, &model.acp, vx, ax, false).unwrap();
        prop_assert_eq!(tape.value(out.c_audio), &tape.value(out.c_visual).transpose());
    }

    #[test]
    fn propagation_is_shot_permutation_equivariant(
        (t, v, a) in inputs(5),
        seed in 0u64..50,
        shift in 0usize..7,
        normalize in any::<bool>(),
    ) {
        let model = small_model(5, 4, seed);
        let order: Vec<usize> = (0..t).map(|i| (i * 5 + shift) % t).collect();
        let mut seen = order.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assume!(seen.len() == t);
        let visual = tensor(t, 5, v);
        let audio = tensor(t, 3, a);
        let run = |visual: &Tensor, audio: &Tensor| {
            let mut tape = Tape::new();
            let b = model.store.bind(&mut tape);
            let vx = tape.constant(visual.clone());
            let ax = tape.constant(audio.clone());
            let out = acp_forward(&mut tape, &b, &model.acp, vx, ax, normalize).unwrap();
            (tape.value(out.v_bar).clone(), tape.value(out.a_bar).clone())
        };
        let (vb, ab) = run(&visual, &audio);
        let (pvb, pab) = run(&visual.permute_rows(&order), &audio.permute_rows(&order));
        prop_assert!(pvb.max_abs_diff(&vb.permute_rows(&order)) < 1e-12);
        prop_assert!(pab.max_abs_diff(&ab.permute_rows(&order)) < 1e-12);
    }

    #[test]
    fn non_positive_correlation_closes_the_gate(
        (t, v, a) in inputs(4),
        seed in 0u64..50,
    ) {
        let model = small_model(4, 4, seed);
        // projected audio is non-negative, so non-positive visual rows make
        // every inner product <= 0
        let v: Vec<f64> = v.iter().map(|x| -x.abs()).collect();
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape);
        let vx = tape.constant(tensor(t, 4, v));
        let ax = tape.constant(tensor(t, 3, a));
        let out = acp_forward(&mut tape, &b, &model.acp, vx, ax, false).unwrap();
        prop_assert!(tape.value(out.c_visual).data().iter().all(|&c| c == 0.0));
        prop_assert!(tape.value(out.c_audio).data().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn unimodal_updates_do_not_depend_on_tau(
        (t, v, a) in inputs(5),
        labels_seed in any::<u64>(),
        seed in 0u64..20,
        tau in 0.1f64..0.9,
    ) {
        let labels: Vec<u8> = (0..t).map(|i| ((labels_seed >> i) & 1) as u8).collect();
        let visual = tensor(t, 5, v);
        let audio = tensor(t, 3, a);
        let updated = |tau: f64| {
            let mut model = small_model(5, 4, seed);
            let cfg = TrainConfig { tau, learning_rate: 0.1, ..TrainConfig::default() };
            train_step(&mut model, &visual, &audio, &labels, &cfg).unwrap();
            model
        };
        let (low, full) = (updated(tau), updated(1.0));
        let mut compared = 0;
        for (p, q) in low.store.iter().zip(full.store.iter()) {
            if p.name.starts_with("head_visual") || p.name.starts_with("head_audio") {
                prop_assert_eq!(&p.value, &q.value, "{}", p.name);
                compared += 1;
            }
        }
        prop_assert!(compared > 0);
    }

    #[test]
    fn multimodal_gradient_vanishes_outside_clean_set(
        (t, v, a) in inputs(4),
        mask in any::<u16>(),
        beta in 0.0f64..1.0,
        mean in any::<bool>(),
    ) {
        let model = small_model(4, 4, 3);
        let labels: Vec<u8> = (0..t).map(|i| (i % 2) as u8).collect();
        let mut selection: Vec<usize> = (0..t).filter(|i| (mask >> i) & 1 == 1).collect();
        if selection.is_empty() {
            selection.push(0);
        }
        let red = if mean { Reduction::Mean } else { Reduction::Sum };
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape);
        let out = model
            .forward(&mut tape, &b, &tensor(t, 4, v), &tensor(t, 3, a), true, true)
            .unwrap();
        let tv = tape.value(out.visual.unwrap()).clone();
        let ta = tape.value(out.audio.unwrap()).clone();
        let ce = mm_ce_loss(&mut tape, out.mm, &labels, &selection, red).unwrap();
        let cons = consistency_loss(&mut tape, out.mm, &tv, &ta, &selection, red).unwrap();
        let total = total_mm_loss(&mut tape, ce, cons, beta).unwrap();
        prop_assert!(tape.value(total).item() >= 0.0);
        let grads = tape.backward(total).unwrap();
        let g = grads.get_or_zeros(&tape, out.mm);
        for i in (0..t).filter(|i| !selection.contains(i)) {
            prop_assert_eq!(g.row(i), &[0.0, 0.0][..]);
        }
        let um = uni_modal_loss(&mut tape, out.visual.unwrap(), &labels, red).unwrap();
        prop_assert!(tape.value(um).item() >= 0.0);
    }
}

/// `(scene lengths, trailer scene picks, θ pair, feature seed)`
fn label_fixture() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, (f64, f64), u64)> {
    (
        prop::collection::vec(1usize..5, 2..7),
        prop::collection::vec(0usize..30, 1..6),
        (-1.0f64..1.0, -1.0f64..1.0),
        any::<u64>(),
    )
}

fn features(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut state = seed | 1;
    tensor(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 2001) as f64 / 1000.0 - 1.0
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn label_tracks_are_scene_closed_order_free_and_monotone(
        (scenes, picks, (theta_a, theta_b), seed) in label_fixture(),
    ) {
        let shots = ShotTable::from_scene_lengths(&scenes, 10).unwrap();
        let movie = features(shots.len(), 3, seed);
        let trailer_rows: Vec<Vec<f64>> = picks
            .iter()
            .map(|&p| movie.row(p % shots.len()).iter().map(|x| x * 0.9 + 0.05).collect())
            .collect();
        let trailer = Tensor::from_rows(&trailer_rows).unwrap();
        let (low, high) = if theta_a < theta_b { (theta_a, theta_b) } else { (theta_b, theta_a) };

        let (track, _) = build_training_labels(&trailer, &movie, &shots, high).unwrap();
        for s in 0..shots.len() {
            let (start, end) = shots.scene_span(s);
            let positive = track.entries[s].label;
            prop_assert!(track.entries[start..end].iter().all(|e| e.label == positive));
            let expected = if positive == 1 { Provenance::SceneExpanded } else { Provenance::Background };
            prop_assert!(track.entries[start..end]
                .iter()
                .all(|e| e.provenance == expected || e.provenance == Provenance::TrailerMatched));
        }

        let reversed = Tensor::from_rows(&trailer_rows.iter().rev().cloned().collect::<Vec<_>>()).unwrap();
        let (track_rev, _) = build_training_labels(&reversed, &movie, &shots, high).unwrap();
        prop_assert_eq!(track_rev.labels(), track.labels());

        let (track_low, _) = build_training_labels(&trailer, &movie, &shots, low).unwrap();
        prop_assert!(track
            .labels()
            .iter()
            .zip(track_low.labels())
            .all(|(h, l)| *h <= l));
    }
}

#[test]
fn softmax_rows_are_distributions_and_permute_with_input() {
    let x = features(6, 4, 9);
    let order = [3, 0, 5, 1, 4, 2];
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(x.permute_rows(&order));
    let sa = tape.softmax_rows(a).unwrap();
    let sb = tape.softmax_rows(b).unwrap();
    for r in 0..6 {
        assert!((tape.value(sa).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(tape.value(sb), &tape.value(sa).permute_rows(&order));
    assert_eq!(x.transpose().transpose(), x);
}
