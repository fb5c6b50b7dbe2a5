use std::f64::consts::TAU;

use plugtrack::data::{
    extract_tracklets, generate_synthetic, parse_mot_file, parse_mot_str, sinusoid, write_mot_file,
    GtTrack, MotRecord, MotionKind, MotionMix, SampleConfig, Sequence, SequenceDataset,
    SyntheticConfig,
};
use plugtrack::geometry::{iou, BBox};
use plugtrack::Error;
use proptest::prelude::*;

#[test]
fn parses_a_mot_row() {
    let r = parse_mot_str("1,2,100,50,20,40,1,-1,-1,-1\n").unwrap();
    assert_eq!(
        r,
        vec![MotRecord {
            frame: 1,
            id: 2,
            left: 100.0,
            top: 50.0,
            w: 20.0,
            h: 40.0,
            conf: 1.0,
            world: [-1.0; 3],
        }]
    );
    assert_eq!(r[0].bbox(), BBox::new(110.0, 70.0, 20.0, 40.0));
    assert!(parse_mot_str("").unwrap().is_empty());
}

#[test]
fn malformed_rows_report_their_position() {
    match parse_mot_str("1,2,100") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
    match parse_mot_str("1,2,100,50,20,40,1,-1,-1,-1\n1,2,x,50,20,40\n") {
        Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 3)),
        other => panic!("{other:?}"),
    }
    assert!(parse_mot_str("0,2,100,50,20,40").is_err());
    assert!(parse_mot_str("1,2,100,50,0,40").is_err());
}

fn record() -> impl Strategy<Value = MotRecord> {
    let cents = |lo: i64, hi: i64| (lo..hi).prop_map(|c| c as f64 / 100.0);
    (
        1i64..500,
        -1i64..50,
        cents(-5000, 200000),
        cents(-5000, 100000),
        cents(1, 50000),
        cents(1, 50000),
        cents(0, 100),
    )
        .prop_map(|(frame, id, left, top, w, h, conf)| MotRecord {
            frame,
            id,
            left,
            top,
            w,
            h,
            conf,
            world: [-1.0; 3],
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_parse_is_identity(records in prop::collection::vec(record(), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.txt");
        write_mot_file(&path, &records).unwrap();
        prop_assert_eq!(parse_mot_file(&path).unwrap(), records.clone());
        // Emitting the parsed rows again gives the same bytes.
        let again = dir.path().join("again.txt");
        write_mot_file(&again, &parse_mot_file(&path).unwrap()).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

fn cfg(mix: MotionMix, noise: f64) -> SyntheticConfig {
    SyntheticConfig {
        n_tracks: 12,
        n_frames: 150,
        motion_mix: mix,
        noise_std: noise,
        seed: 7,
        ..SyntheticConfig::default()
    }
}

#[test]
fn noise_free_linear_tracks_have_zero_second_differences() {
    let ds = generate_synthetic(&cfg(MotionMix::only(MotionKind::Linear), 0.0)).unwrap();
    for t in &ds.sequences[0].gt {
        assert_eq!(t.kind, Some(MotionKind::Linear));
        for w in t.boxes.windows(3) {
            assert!((w[2].cx - 2.0 * w[1].cx + w[0].cx).abs() < 1e-9);
            assert!((w[2].cy - 2.0 * w[1].cy + w[0].cy).abs() < 1e-9);
        }
    }
    // Noise-free detections are the gt boxes.
    let seq = &ds.sequences[0];
    let (d, g) = (
        seq.detections[10][3].to_array(),
        seq.gt[3].boxes[10].to_array(),
    );
    assert!(d.iter().zip(g).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn sinusoid_averages_out_over_a_period() {
    // The largest amplitude the generator draws on a 1080 px image.
    let amp = 0.15 * 1080.0;
    for period in [20.0, 33.3, 60.0] {
        for phase in [0.0, 1.0, 2.5] {
            let steps = 10_000;
            let dt = period / steps as f64;
            let mean = (0..steps)
                .map(|k| sinusoid(amp, period, phase, (k as f64 + 0.5) * dt))
                .sum::<f64>()
                / steps as f64;
            assert!(mean.abs() < 0.5, "period {period} phase {phase}: {mean}");
        }
    }
    assert!((sinusoid(2.0, 40.0, 0.0, 10.0) - 2.0).abs() < 1e-12);
    assert!((sinusoid(2.0, 40.0, TAU / 4.0, 0.0) - 2.0).abs() < 1e-12);
}

#[test]
fn sinusoidal_displacement_is_perpendicular_to_the_drift() {
    let ds = generate_synthetic(&cfg(MotionMix::only(MotionKind::Sinusoidal), 0.0)).unwrap();
    for t in &ds.sequences[0].gt {
        // Second differences see only the sinusoid, so they all lie on one
        // line; they are not all zero.
        let dd: Vec<(f64, f64)> = t
            .boxes
            .windows(3)
            .map(|w| {
                (
                    w[2].cx - 2.0 * w[1].cx + w[0].cx,
                    w[2].cy - 2.0 * w[1].cy + w[0].cy,
                )
            })
            .collect();
        let &(nx, ny) = dd
            .iter()
            .max_by(|a, b| a.0.hypot(a.1).total_cmp(&b.0.hypot(b.1)))
            .unwrap();
        let norm = nx.hypot(ny);
        assert!(norm > 0.01, "track {} has no curvature", t.id);
        for (x, y) in &dd {
            assert!((x * ny - y * nx).abs() / norm < 1e-6);
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let c = SyntheticConfig {
        n_sequences: 2,
        ..cfg(MotionMix::default(), 2.0)
    };
    let a = generate_synthetic(&c).unwrap();
    assert_eq!(a, generate_synthetic(&c).unwrap());
    assert_ne!(
        a,
        generate_synthetic(&SyntheticConfig {
            seed: 8,
            ..c.clone()
        })
        .unwrap()
    );
    assert_ne!(a.sequences[0], a.sequences[1]);
}

#[test]
fn boxes_stay_inside_the_image() {
    for kind in [
        MotionKind::Linear,
        MotionKind::Sinusoidal,
        MotionKind::Circular,
    ] {
        let c = SyntheticConfig {
            img_w: 640.0,
            img_h: 480.0,
            n_sequences: 3,
            n_frames: 300,
            ..cfg(MotionMix::only(kind), 5.0)
        };
        for seq in generate_synthetic(&c).unwrap().sequences {
            let dets = seq.detections.iter().flatten();
            for b in seq.gt.iter().flat_map(|t| &t.boxes).chain(dets) {
                let [x1, y1, x2, y2] = b.corners();
                assert!(
                    x1 >= -1e-9 && y1 >= -1e-9 && x2 <= 640.0 + 1e-9 && y2 <= 480.0 + 1e-9,
                    "{b:?}"
                );
                assert!(b.w >= 4.0 - 1e-9 && b.h >= 4.0 - 1e-9, "{b:?}");
            }
        }
    }
}

#[test]
fn occlusion_gaps_drop_detections_but_keep_gt() {
    let mut c = cfg(MotionMix::default(), 1.0);
    c.occlusion.gap_prob = 1.0;
    let seq = &generate_synthetic(&c).unwrap().sequences[0];
    let dets: usize = seq.detections.iter().map(Vec::len).sum();
    let gt: usize = seq.gt.iter().map(|t| t.boxes.len()).sum();
    assert_eq!(gt, 12 * 150);
    assert!(dets <= gt - 12 * 5);
    assert!(c.validate().is_ok());
    assert!(SyntheticConfig {
        motion_mix: MotionMix {
            linear: 0.5,
            sinusoidal: 0.2,
            circular: 0.2
        },
        ..c
    }
    .validate()
    .is_err());
}

fn one_track(len: usize) -> SequenceDataset {
    let boxes: Vec<BBox> = (0..len)
        .map(|t| BBox::new(100.0 + 3.0 * t as f64, 200.0 - t as f64, 30.0, 60.0))
        .collect();
    SequenceDataset {
        sequences: vec![Sequence {
            name: "s".into(),
            img_w: 1920.0,
            img_h: 1080.0,
            fps: 30.0,
            length: len,
            gt: vec![GtTrack {
                id: 1,
                kind: Some(MotionKind::Linear),
                frames: (1..=len as i64).collect(),
                boxes,
            }],
            detections: vec![Vec::new(); len],
        }],
    }
}

#[test]
fn window_counts() {
    let c = SampleConfig::default();
    assert!(extract_tracklets(&one_track(5), &c).unwrap().is_empty());
    let s = extract_tracklets(&one_track(10), &c).unwrap();
    assert_eq!(s.len(), 5);
    assert_eq!(
        s.iter().map(|x| x.frame).collect::<Vec<_>>(),
        vec![5, 6, 7, 8, 9]
    );
    for x in &s {
        assert_eq!(x.window.len(), 5);
        assert_eq!(x.window.last_frame(), Some(x.frame));
        assert_eq!(
            x.gt_next,
            one_track(10).sequences[0].gt[0].boxes[x.frame as usize]
        );
    }
}

#[test]
fn kalman_predictions_converge_on_exact_linear_tracks() {
    let c = SampleConfig {
        obs_noise_std: 0.0,
        ..SampleConfig::default()
    };
    let ds = generate_synthetic(&cfg(MotionMix::only(MotionKind::Linear), 0.0)).unwrap();
    let samples = extract_tracklets(&ds, &c).unwrap();
    assert!(!samples.is_empty());
    for s in &samples {
        let v = iou(&s.kf_pred, &s.gt_next).unwrap();
        assert!(v > 0.99, "frame {} iou {v}", s.frame);
    }
}

#[test]
fn regimes_separate_under_the_kalman_filter() {
    let c = SyntheticConfig {
        n_tracks: 20,
        n_frames: 120,
        motion_mix: MotionMix {
            linear: 0.5,
            sinusoidal: 0.5,
            circular: 0.0,
        },
        seed: 3,
        ..SyntheticConfig::default()
    };
    let samples =
        extract_tracklets(&generate_synthetic(&c).unwrap(), &SampleConfig::default()).unwrap();
    let mean = |kind| {
        let v: Vec<f64> = samples
            .iter()
            .filter(|s| s.kind == Some(kind))
            .map(|s| iou(&s.kf_pred, &s.gt_next).unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (lin, sin) = (mean(MotionKind::Linear), mean(MotionKind::Sinusoidal));
    assert!(lin - sin >= 0.05, "linear {lin} sinusoidal {sin}");
}

#[test]
fn dataset_directories_round_trip() {
    let ds = generate_synthetic(&SyntheticConfig {
        n_sequences: 2,
        n_tracks: 4,
        n_frames: 30,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write_dir(dir.path()).unwrap();
    let back = SequenceDataset::read_dir(dir.path()).unwrap();
    assert_eq!(back.sequences.len(), 2);
    for (a, b) in ds.sequences.iter().zip(&back.sequences) {
        assert_eq!(
            (a.name.as_str(), a.length, a.img_w, a.img_h),
            (b.name.as_str(), b.length, b.img_w, b.img_h)
        );
        assert_eq!(a.gt.len(), b.gt.len());
        for (ta, tb) in a.gt.iter().zip(&b.gt) {
            assert_eq!((ta.id, ta.kind, &ta.frames), (tb.id, tb.kind, &tb.frames));
            for (x, y) in ta.boxes.iter().zip(&tb.boxes) {
                assert!(x
                    .to_array()
                    .iter()
                    .zip(y.to_array())
                    .all(|(p, q)| (p - q).abs() < 0.01));
            }
        }
        assert_eq!(
            a.detections.iter().map(Vec::len).collect::<Vec<_>>(),
            b.detections.iter().map(Vec::len).collect::<Vec<_>>()
        );
    }
    // A second write of what was read gives the same files.
    let dir2 = tempfile::tempdir().unwrap();
    back.write_dir(dir2.path()).unwrap();
    for f in ["gt.txt", "det.txt", "seqinfo.ini", "motion.csv"] {
        let p = |d: &std::path::Path| std::fs::read(d.join("synth-001").join(f)).unwrap();
        assert_eq!(p(dir.path()), p(dir2.path()), "{f}");
    }
    assert!(SequenceDataset::read_dir(dir2.path().join("missing").as_path()).is_err());
}
