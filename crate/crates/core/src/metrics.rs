//! CLEAR-MOT accuracy, identity F1, IoU summaries and predictor win counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::abg::blend_predictions;
use crate::assignment;
use crate::cme::CmeInputs;
use crate::data::{MotRecord, TrackletSample};
use crate::error::{domain, Result};
use crate::geometry::{iou_unchecked, BBox};
use crate::network::PlugNet;
use crate::predictors::MotionPredictor;

pub const MATCH_IOU: f64 = 0.5;

/// Cost standing in for a forbidden pair in the frame-level assignment; any
/// assignment using one is worse than leaving the pair unmatched.
const FORBIDDEN: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub mota: f64,
    pub idf1: f64,
    pub idsw: usize,
    pub fp: usize,
    pub fn_: usize,
    pub gt_count: usize,
    pub matches: usize,
    /// Mean IoU over matched pairs.
    pub mean_iou: f64,
    pub per_predictor_wins: BTreeMap<String, usize>,
    idtp: usize,
    hyp_count: usize,
    iou_sum: f64,
}

impl EvalReport {
    fn finish(mut self) -> Self {
        let g = self.gt_count as f64;
        self.mota = 1.0 - (self.fp + self.fn_ + self.idsw) as f64 / g;
        let denom = (self.gt_count + self.hyp_count) as f64;
        self.idf1 = if denom > 0.0 {
            2.0 * self.idtp as f64 / denom
        } else {
            0.0
        };
        self.mean_iou = if self.matches > 0 {
            self.iou_sum / self.matches as f64
        } else {
            0.0
        };
        self
    }

    /// Pools counts over sequences; identity matching stays per sequence.
    pub fn combine(reports: &[EvalReport]) -> Result<EvalReport> {
        let mut out = EvalReport::default();
        for r in reports {
            out.idsw += r.idsw;
            out.fp += r.fp;
            out.fn_ += r.fn_;
            out.gt_count += r.gt_count;
            out.matches += r.matches;
            out.idtp += r.idtp;
            out.hyp_count += r.hyp_count;
            out.iou_sum += r.iou_sum;
            for (k, v) in &r.per_predictor_wins {
                *out.per_predictor_wins.entry(k.clone()).or_default() += v;
            }
        }
        if out.gt_count == 0 {
            return domain("MOTA is undefined without ground-truth boxes");
        }
        Ok(out.finish())
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mota: {:.6}", self.mota);
        let _ = writeln!(s, "idf1: {:.6}", self.idf1);
        let _ = writeln!(s, "idsw: {}", self.idsw);
        let _ = writeln!(s, "fp: {}", self.fp);
        let _ = writeln!(s, "fn: {}", self.fn_);
        let _ = writeln!(s, "gt_count: {}", self.gt_count);
        let _ = writeln!(s, "mean_iou: {:.6}", self.mean_iou);
        for (k, v) in &self.per_predictor_wins {
            let _ = writeln!(s, "wins.{k}: {v}");
        }
        s
    }

    /// Single-line record.
    pub fn to_record(&self, name: &str) -> String {
        format!(
            "sequence={name} mota={:.6} idf1={:.6} idsw={} fp={} fn={} gt={} mean_iou={:.6}",
            self.mota, self.idf1, self.idsw, self.fp, self.fn_, self.gt_count, self.mean_iou
        )
    }
}

fn by_frame(records: &[MotRecord]) -> BTreeMap<i64, Vec<(i64, BBox)>> {
    let mut out: BTreeMap<i64, Vec<(i64, BBox)>> = BTreeMap::new();
    for r in records {
        out.entry(r.frame).or_default().push((r.id, r.bbox()));
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.to_array().partial_cmp(&b.1.to_array()).unwrap())
        });
    }
    out
}

/// CLEAR-MOT counts with match persistence plus IDF1 from the global
/// identity matching.
pub fn evaluate_sequence(
    gt: &[MotRecord],
    hyp: &[MotRecord],
    iou_match_threshold: f64,
) -> Result<EvalReport> {
    if gt.is_empty() {
        return domain("MOTA is undefined without ground-truth boxes");
    }
    let gt_frames = by_frame(gt);
    let hyp_frames = by_frame(hyp);
    let frames: BTreeSet<i64> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    let empty = Vec::new();
    let mut report = EvalReport {
        gt_count: gt.len(),
        hyp_count: hyp.len(),
        ..Default::default()
    };
    // Previous-frame match and last-ever match per gt id.
    let mut prev: BTreeMap<i64, i64> = BTreeMap::new();
    let mut last: BTreeMap<i64, i64> = BTreeMap::new();
    // Frames in which each (gt id, hyp id) pair overlaps above threshold.
    let mut overlap: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = hyp_frames.get(&f).unwrap_or(&empty);
        let ious: Vec<Vec<f64>> = g
            .iter()
            .map(|(_, gb)| h.iter().map(|(_, hb)| iou_unchecked(gb, hb)).collect())
            .collect();
        for (gi, (gid, _)) in g.iter().enumerate() {
            for (hi, (hid, _)) in h.iter().enumerate() {
                if ious[gi][hi] >= iou_match_threshold {
                    *overlap.entry((*gid, *hid)).or_default() += 1;
                }
            }
        }
        let mut g_match: Vec<Option<usize>> = vec![None; g.len()];
        let mut h_used = vec![false; h.len()];
        // Keep last frame's correspondences that are still valid.
        for (gi, (gid, _)) in g.iter().enumerate() {
            if let Some(pid) = prev.get(gid) {
                if let Some(hi) = h.iter().position(|(hid, _)| hid == pid) {
                    if !h_used[hi] && ious[gi][hi] >= iou_match_threshold {
                        g_match[gi] = Some(hi);
                        h_used[hi] = true;
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..g.len()).filter(|&i| g_match[i].is_none()).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&i| !h_used[i]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let mut cost = Vec::with_capacity(free_g.len() * free_h.len());
            for &gi in &free_g {
                for &hi in &free_h {
                    let v = ious[gi][hi];
                    cost.push(if v >= iou_match_threshold {
                        1.0 - v
                    } else {
                        FORBIDDEN
                    });
                }
            }
            for (r, a) in assignment::solve(&cost, free_g.len(), free_h.len())
                .into_iter()
                .enumerate()
            {
                if let Some(c) = a {
                    let (gi, hi) = (free_g[r], free_h[c]);
                    if ious[gi][hi] >= iou_match_threshold {
                        g_match[gi] = Some(hi);
                        h_used[hi] = true;
                    }
                }
            }
        }
        prev.clear();
        for (gi, (gid, _)) in g.iter().enumerate() {
            match g_match[gi] {
                Some(hi) => {
                    let hid = h[hi].0;
                    if last.get(gid).is_some_and(|l| *l != hid) {
                        report.idsw += 1;
                    }
                    last.insert(*gid, hid);
                    prev.insert(*gid, hid);
                    report.matches += 1;
                    report.iou_sum += ious[gi][hi];
                }
                None => report.fn_ += 1,
            }
        }
        report.fp += h_used.iter().filter(|u| !**u).count();
    }
    report.idtp = identity_tp(&overlap);
    Ok(report.finish())
}

/// Maximum total overlap over one-to-one gt-id/hyp-id pairings.
fn identity_tp(overlap: &BTreeMap<(i64, i64), usize>) -> usize {
    let gids: Vec<i64> = overlap
        .keys()
        .map(|k| k.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let hids: Vec<i64> = overlap
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if gids.is_empty() {
        return 0;
    }
    let mut cost = Vec::with_capacity(gids.len() * hids.len());
    for g in &gids {
        for h in &hids {
            cost.push(-(overlap.get(&(*g, *h)).copied().unwrap_or(0) as f64));
        }
    }
    assignment::solve(&cost, gids.len(), hids.len())
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| overlap.get(&(gids[r], hids[c])).copied().unwrap_or(0)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouStats {
    pub mean: f64,
    pub median: f64,
    pub frac_above_half: f64,
}

pub fn iou_stats(pred: &[BBox], gt: &[BBox]) -> Result<IouStats> {
    if pred.len() != gt.len() {
        return domain(format!(
            "{} predictions for {} ground-truth boxes",
            pred.len(),
            gt.len()
        ));
    }
    let ious: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| iou_unchecked(p, g))
        .collect();
    Ok(summarize(&ious))
}

/// Statistics of a list of IoU values; all zero for an empty list.
pub fn summarize(ious: &[f64]) -> IouStats {
    if ious.is_empty() {
        return IouStats {
            mean: 0.0,
            median: 0.0,
            frac_above_half: 0.0,
        };
    }
    let n = ious.len();
    let mut sorted = ious.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    IouStats {
        mean: ious.iter().sum::<f64>() / n as f64,
        median,
        frac_above_half: ious.iter().filter(|v| **v >= 0.5).count() as f64 / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WinCounts {
    /// Tracklets on which each predictor reached the highest IoU, ties
    /// crediting every tied predictor.
    pub wins: BTreeMap<String, usize>,
    pub ties: usize,
    pub total: usize,
}

impl WinCounts {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("predictor,wins,total,fraction\n");
        for (k, v) in &self.wins {
            let frac = if self.total > 0 {
                *v as f64 / self.total as f64
            } else {
                0.0
            };
            let _ = writeln!(s, "{k},{v},{},{frac:.6}", self.total);
        }
        let _ = writeln!(
            s,
            "ties,{},{},{:.6}",
            self.ties,
            self.total,
            if self.total > 0 {
                self.ties as f64 / self.total as f64
            } else {
                0.0
            }
        );
        s
    }
}

/// Win counts from a `[tracklet][predictor]` IoU table.
pub fn win_counts_from_ious(names: &[&str], ious: &[Vec<f64>]) -> Result<WinCounts> {
    let mut out = WinCounts {
        wins: names.iter().map(|n| (n.to_string(), 0)).collect(),
        ..Default::default()
    };
    for row in ious {
        if row.len() != names.len() {
            return domain("IoU row does not match the predictor list");
        }
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..row.len()).filter(|&i| row[i] == best).collect();
        if winners.len() > 1 {
            out.ties += 1;
        }
        for i in winners {
            *out.wins.get_mut(names[i]).expect("name registered") += 1;
        }
        out.total += 1;
    }
    Ok(out)
}

pub fn predictor_win_counts(
    tracklets: &[TrackletSample],
    predictors: &[&dyn MotionPredictor],
) -> Result<WinCounts> {
    let names: Vec<&str> = predictors.iter().map(|p| p.id()).collect();
    let mut ious = Vec::with_capacity(tracklets.len());
    for t in tracklets {
        let ctx = t.context();
        let row = predictors
            .iter()
            .map(|p| {
                Ok(iou_unchecked(
                    &p.predict_next(&t.window, &ctx)?.bbox,
                    &t.gt_next,
                ))
            })
            .collect::<Result<Vec<f64>>>()?;
        ious.push(row);
    }
    win_counts_from_ious(&names, &ious)
}

/// One tracklet as seen by the trained blend: factors and next-frame IoUs of
/// both arms and of the blend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRow {
    /// Frame being predicted.
    pub frame: i64,
    pub track_id: i64,
    pub alpha: [f64; 4],
    pub iou_kf: f64,
    pub iou_dp: f64,
    pub iou_blend: f64,
}

const ALPHA_CHUNK: usize = 256;

/// Runs `net` over every tracklet; `dp_preds` must be aligned with `tracklets`.
pub fn alpha_rows(
    net: &PlugNet,
    tracklets: &[TrackletSample],
    dp_preds: &[BBox],
) -> Result<Vec<AlphaRow>> {
    if tracklets.len() != dp_preds.len() {
        return domain(format!(
            "{} DP predictions for {} tracklets",
            dp_preds.len(),
            tracklets.len()
        ));
    }
    let mut out = Vec::with_capacity(tracklets.len());
    for (chunk, preds) in tracklets
        .chunks(ALPHA_CHUNK)
        .zip(dp_preds.chunks(ALPHA_CHUNK))
    {
        let inputs = chunk
            .iter()
            .zip(preds)
            .map(|(t, d)| {
                CmeInputs::from_pixels(&t.window, &t.kf_pred, d, t.sigma_kf, t.img_w, t.img_h)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&CmeInputs> = inputs.iter().collect();
        for ((t, d), a) in chunk.iter().zip(preds).zip(net.predict_alpha(&refs)?) {
            let blend = blend_predictions(&a, &t.kf_pred, d);
            out.push(AlphaRow {
                frame: t.frame + 1,
                track_id: t.track_id,
                alpha: a.alpha,
                iou_kf: iou_unchecked(&t.kf_pred, &t.gt_next),
                iou_dp: iou_unchecked(d, &t.gt_next),
                iou_blend: iou_unchecked(&blend, &t.gt_next),
            });
        }
    }
    Ok(out)
}
