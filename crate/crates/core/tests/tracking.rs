use std::collections::{BTreeMap, BTreeSet};

use plugtrack::abg::BlendFactors;
use plugtrack::data::{generate_synthetic, MotRecord, MotionKind, MotionMix, SyntheticConfig};
use plugtrack::geometry::{iou, BBox};
use plugtrack::metrics::{evaluate_sequence, MATCH_IOU};
use plugtrack::network::PlugNet;
use plugtrack::predictors::{KalmanPredictor, Poly2Predictor};
use plugtrack::tracking::{
    associate, run_sequence, MotionMode, TrackOutput, Tracker, TrackerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn association_edge_cases() {
    let tracks = [
        BBox::new(10.0, 10.0, 10.0, 10.0),
        BBox::new(50.0, 50.0, 10.0, 10.0),
    ];
    let r = associate(&tracks, &[], 0.3);
    assert!(r.matches.is_empty());
    assert_eq!(r.unmatched_tracks, vec![0, 1]);
    let r = associate(&[], &tracks, 0.3);
    assert_eq!(r.unmatched_detections, vec![0, 1]);

    // Shifted copies give a dominant diagonal.
    let dets = [
        BBox::new(51.0, 50.0, 10.0, 10.0),
        BBox::new(10.5, 10.0, 10.0, 10.0),
    ];
    let r = associate(&tracks, &dets, 0.3);
    assert_eq!(r.matches, vec![(0, 1), (1, 0)]);
    // A match below the threshold is split apart.
    let far = [BBox::new(17.0, 10.0, 10.0, 10.0)];
    let r = associate(&tracks[..1], &far, 0.3);
    assert!(r.matches.is_empty());
    assert_eq!(
        (r.unmatched_tracks, r.unmatched_detections),
        (vec![0], vec![0])
    );
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn association_cost_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let perms = permutations(3);
    assert_eq!(perms.len(), 6);
    for _ in 0..300 {
        let b = |rng: &mut ChaCha8Rng| {
            BBox::new(
                rng.random_range(0.0..40.0),
                rng.random_range(0.0..40.0),
                rng.random_range(10.0..30.0),
                rng.random_range(10.0..30.0),
            )
        };
        let p: Vec<BBox> = (0..3).map(|_| b(&mut rng)).collect();
        let d: Vec<BBox> = (0..3).map(|_| b(&mut rng)).collect();
        let cost = |i: usize, j: usize| 1.0 - iou(&p[i], &d[j]).unwrap();
        let best = perms
            .iter()
            .map(|perm| (0..3).map(|i| cost(i, perm[i])).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        // Threshold 0 keeps the full assignment.
        let r = associate(&p, &d, 0.0);
        assert_eq!(r.matches.len(), 3);
        let got: f64 = r.matches.iter().map(|&(i, j)| cost(i, j)).sum();
        assert!((got - best).abs() < 1e-9, "{got} vs {best}");
    }
}

fn records(out: &[TrackOutput]) -> Vec<MotRecord> {
    out.iter().map(TrackOutput::to_record).collect()
}

fn linear_track(start: (f64, f64), v: (f64, f64), n: usize) -> Vec<BBox> {
    (0..n)
        .map(|t| {
            BBox::new(
                start.0 + v.0 * t as f64,
                start.1 + v.1 * t as f64,
                30.0,
                40.0,
            )
        })
        .collect()
}

#[test]
fn single_track_keeps_its_id() {
    let dets: Vec<Vec<BBox>> = linear_track((100.0, 100.0), (4.0, 2.0), 100)
        .into_iter()
        .map(|b| vec![b])
        .collect();
    let out = run_sequence(
        &dets,
        MotionMode::KalmanOnly,
        &Poly2Predictor,
        &TrackerConfig::default(),
        1920.0,
        1080.0,
    )
    .unwrap();
    assert_eq!(out.len(), 100);
    assert!(out.iter().all(|o| o.id == 1));
}

#[test]
fn crossing_tracks_keep_their_identities() {
    // Opposite horizontal motion; the boxes pass with a 10 px vertical gap,
    // so their IoU is zero at the crossing frame.
    let a = linear_track((100.0, 200.0), (6.0, 0.0), 60);
    let b = linear_track((454.0, 250.0), (-6.0, 0.0), 60);
    assert_eq!(iou(&a[30], &b[30]).unwrap(), 0.0);
    assert!((a[29].cx - b[29].cx).abs() < 10.0);
    let dets: Vec<Vec<BBox>> = a.iter().zip(&b).map(|(x, y)| vec![*y, *x]).collect();
    let net = PlugNet::new(0);
    for mode in [
        MotionMode::KalmanOnly,
        MotionMode::DpOnly,
        MotionMode::Fused(&net),
    ] {
        let out = run_sequence(
            &dets,
            mode,
            &Poly2Predictor,
            &TrackerConfig::default(),
            1920.0,
            1080.0,
        )
        .unwrap();
        let mut ids: BTreeMap<bool, BTreeSet<i64>> = BTreeMap::new();
        for o in &out {
            ids.entry(o.bbox.cy < 225.0).or_default().insert(o.id);
        }
        assert_eq!(ids[&true].len(), 1);
        assert_eq!(ids[&false].len(), 1);
        assert_ne!(ids[&true], ids[&false]);
    }
}

fn sequence(
    kind: Option<MotionKind>,
    noise: f64,
    gap_prob: f64,
    seed: u64,
) -> plugtrack::data::Sequence {
    let mut cfg = SyntheticConfig {
        n_tracks: 6,
        n_frames: 80,
        noise_std: noise,
        seed,
        ..SyntheticConfig::default()
    };
    if let Some(k) = kind {
        cfg.motion_mix = MotionMix::only(k);
    }
    cfg.occlusion.gap_prob = gap_prob;
    generate_synthetic(&cfg).unwrap().sequences.remove(0)
}

#[test]
fn blend_extremes_equal_single_arm_trackers() {
    let seq = sequence(None, 2.0, 0.5, 4);
    let cfg = TrackerConfig::default();
    let run = |mode| {
        run_sequence(
            &seq.detections,
            mode,
            &Poly2Predictor,
            &cfg,
            seq.img_w,
            seq.img_h,
        )
        .unwrap()
    };
    let one = BlendFactors::new([1.0; 4]).unwrap();
    let zero = BlendFactors::new([0.0; 4]).unwrap();
    let strip = |v: Vec<TrackOutput>| {
        v.into_iter()
            .map(|o| (o.frame, o.id, o.bbox))
            .collect::<Vec<_>>()
    };
    let kalman = strip(run(MotionMode::KalmanOnly));
    let dp = strip(run(MotionMode::DpOnly));
    assert!(!kalman.is_empty());
    assert_eq!(strip(run(MotionMode::Fixed(one))), kalman);
    assert_eq!(strip(run(MotionMode::Fixed(zero))), dp);
    assert_ne!(kalman, dp);
}

#[test]
fn empty_and_missing_frames() {
    let cfg = TrackerConfig::default();
    assert!(run_sequence(
        &[],
        MotionMode::KalmanOnly,
        &Poly2Predictor,
        &cfg,
        640.0,
        480.0
    )
    .unwrap()
    .is_empty());
    let dets = vec![Vec::new(); 10];
    assert!(run_sequence(
        &dets,
        MotionMode::DpOnly,
        &Poly2Predictor,
        &cfg,
        640.0,
        480.0
    )
    .unwrap()
    .is_empty());
    assert!(Tracker::new(
        TrackerConfig {
            iou_threshold: 1.5,
            ..cfg
        },
        MotionMode::KalmanOnly,
        &Poly2Predictor,
        640.0,
        480.0
    )
    .is_err());
}

#[test]
fn oracle_detections_on_linear_motion_are_perfect() {
    let seq = sequence(Some(MotionKind::Linear), 0.0, 0.0, 5).with_oracle_detections();
    let net = PlugNet::new(3);
    let out = run_sequence(
        &seq.detections,
        MotionMode::Fused(&net),
        &Poly2Predictor,
        &TrackerConfig::default(),
        seq.img_w,
        seq.img_h,
    )
    .unwrap();
    let r = evaluate_sequence(&seq.gt_records(), &records(&out), MATCH_IOU).unwrap();
    assert_eq!((r.mota, r.idsw, r.fp, r.fn_), (1.0, 0, 0, 0));
    assert_eq!(r.idf1, 1.0);
}

#[test]
fn ids_are_unique_per_frame_and_output_is_deterministic() {
    let seq = sequence(None, 3.0, 0.6, 6);
    let net = PlugNet::new(1);
    let run = || {
        run_sequence(
            &seq.detections,
            MotionMode::Fused(&net),
            &KalmanPredictor,
            &TrackerConfig::default(),
            seq.img_w,
            seq.img_h,
        )
        .unwrap()
    };
    let out = run();
    let mut seen = BTreeSet::new();
    for o in &out {
        assert!(
            seen.insert((o.frame, o.id)),
            "id {} twice in frame {}",
            o.id,
            o.frame
        );
        assert!(o.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }
    assert_eq!(out, run());
}

#[test]
fn lost_tracks_extend_their_history() {
    // Detections vanish for five frames mid-track.
    let boxes = linear_track((200.0, 200.0), (3.0, 0.0), 40);
    let dets: Vec<Vec<BBox>> = boxes
        .iter()
        .enumerate()
        .map(|(t, b)| {
            if (20..25).contains(&t) {
                vec![]
            } else {
                vec![*b]
            }
        })
        .collect();
    let cfg = TrackerConfig::default();
    let out = run_sequence(
        &dets,
        MotionMode::KalmanOnly,
        &Poly2Predictor,
        &cfg,
        1920.0,
        1080.0,
    )
    .unwrap();
    assert!(out.iter().all(|o| o.id == 1));
    assert!(out.iter().any(|o| o.synthetic_history > 0));
    let plain = run_sequence(
        &dets,
        MotionMode::KalmanOnly,
        &Poly2Predictor,
        &TrackerConfig {
            extend_lost: false,
            ..cfg
        },
        1920.0,
        1080.0,
    )
    .unwrap();
    assert!(plain.iter().all(|o| o.synthetic_history == 0));
}
