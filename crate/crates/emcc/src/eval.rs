//! Verification-accuracy evaluation: genuine/imposter pairing over a
//! multi-impression dataset, error-rate metrics (EER, FMR1000, DET),
//! synthetic dataset generation, and code distribution statistics.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::matcher::{greedy_decision_score, score_matrix, GreedyParams, MatcherError};
use crate::mcc::{build_cylinders, MccError, MccParams};
use crate::minutiae::{read_dataset_dir, write_minutiae_file, Minutia, MinutiaeError, MinutiaeRecord};
use crate::template::{template_from_features, CancelableTemplate, EnrollError};
use crate::transform::{derive_index_set, trace_pipeline, StageTrace, TransformError, TransformKey};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score lists must be non-empty")]
    EmptyScores,
    #[error("dataset shape: {0}")]
    DatasetShape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Minutiae(#[from] MinutiaeError),
    #[error(transparent)]
    Mcc(#[from] MccError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl From<EnrollError> for EvalError {
    fn from(e: EnrollError) -> Self {
        match e {
            EnrollError::Mcc(e) => EvalError::Mcc(e),
            EnrollError::Transform(e) => EvalError::Transform(e),
            EnrollError::NoValidFeatures => {
                EvalError::DatasetShape("record produced no valid features".into())
            }
        }
    }
}

/// Closed-form pair counts for `fingers` x `impressions`: all impression
/// pairs within each finger, first impressions across fingers.
pub fn protocol_pairs(fingers: usize, impressions: usize) -> (usize, usize) {
    let genuine = fingers * impressions * (impressions - 1) / 2;
    let imposter = fingers * (fingers - 1) / 2;
    (genuine, imposter)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenuineScore {
    pub finger: String,
    pub impression_a: String,
    pub impression_b: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImposterScore {
    pub finger_a: String,
    pub finger_b: String,
    pub score: f64,
}

/// Mean wall-clock milliseconds per item in each pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    /// Cylinder construction, per record.
    pub build_ms: f64,
    /// Protected-feature transform, per record.
    pub transform_ms: f64,
    /// Score matrix plus greedy consolidation, per comparison.
    pub match_ms: f64,
}

/// Raw protocol output before metric summarization.
#[derive(Debug, Clone)]
pub struct ProtocolScores {
    pub genuine: Vec<GenuineScore>,
    pub imposter: Vec<ImposterScore>,
    pub timing: StageTiming,
    pub fingers: usize,
    pub impressions: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreHistogram {
    pub bins: usize,
    pub genuine: Vec<u64>,
    pub imposter: Vec<u64>,
}

impl ScoreHistogram {
    /// Equal-width bins over [0, 1]; scores of exactly 1 land in the last bin.
    pub fn from_scores(genuine: &[f64], imposter: &[f64], bins: usize) -> Self {
        let mut h = ScoreHistogram {
            bins,
            genuine: vec![0; bins],
            imposter: vec![0; bins],
        };
        let slot = |s: f64| ((s * bins as f64) as usize).min(bins - 1);
        for &s in genuine {
            h.genuine[slot(s)] += 1;
        }
        for &s in imposter {
            h.imposter[slot(s)] += 1;
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub genuine: Vec<GenuineScore>,
    pub imposter: Vec<ImposterScore>,
    /// Equal error rate, percent.
    pub eer: f64,
    /// FNMR at the lowest threshold with FMR <= 0.1 percent, percent.
    pub fmr1000: f64,
    pub det: Vec<(f64, f64)>,
    pub histogram: ScoreHistogram,
    pub timing: StageTiming,
    pub fingers: usize,
    pub impressions: usize,
}

pub const DEFAULT_DET_GRID: usize = 1000;
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

/// (FMR, FNMR) evaluated at every distinct score, bracketed by virtual
/// thresholds below and above all scores. A comparison matches when its
/// score is >= the threshold, so FMR falls and FNMR rises along the list.
fn rate_points(genuine: &[f64], imposter: &[f64]) -> Vec<(f64, f64)> {
    let mut cands: Vec<f64> = genuine.iter().chain(imposter).copied().collect();
    cands.sort_unstable_by(f64::total_cmp);
    cands.dedup();
    let mut gen_sorted = genuine.to_vec();
    gen_sorted.sort_unstable_by(f64::total_cmp);
    let mut imp_sorted = imposter.to_vec();
    imp_sorted.sort_unstable_by(f64::total_cmp);
    let ng = genuine.len() as f64;
    let ni = imposter.len() as f64;
    let mut points = Vec::with_capacity(cands.len() + 2);
    points.push((1.0, 0.0));
    for &t in &cands {
        let imp_ge = imp_sorted.len() - imp_sorted.partition_point(|&s| s < t);
        let gen_lt = gen_sorted.partition_point(|&s| s < t);
        points.push((imp_ge as f64 / ni, gen_lt as f64 / ng));
    }
    points.push((0.0, 1.0));
    points
}

/// Equal error rate as a percentage.
///
/// FMR and FNMR are step functions of the threshold; between sampled
/// thresholds both are linearly interpolated, and the EER is where the
/// interpolants cross. When the sampled curves touch exactly (FMR == FNMR
/// at some threshold), the smaller of the touch value and the interpolated
/// crossing is reported.
pub fn compute_eer(genuine: &[f64], imposter: &[f64]) -> Result<f64, EvalError> {
    if genuine.is_empty() || imposter.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let points = rate_points(genuine, imposter);
    let mut best = f64::INFINITY;
    for &(fmr, fnmr) in &points {
        if fmr == fnmr {
            best = best.min(fmr);
        }
    }
    // FMR - FNMR is non-increasing along the points, so the last point above
    // the diagonal and the first below it bracket the crossing.
    let above = points.iter().rev().find(|p| p.0 > p.1);
    let below = points.iter().find(|p| p.0 < p.1);
    if let (Some(a), Some(b)) = (above, below) {
        let da = a.0 - a.1;
        let db = b.0 - b.1;
        let lambda = da / (da - db);
        best = best.min(a.0 + lambda * (b.0 - a.0));
    }
    Ok(best * 100.0)
}

/// Lowest FNMR over thresholds where FMR <= 1/1000, as a percentage.
///
/// With fewer than 1,000 imposter comparisons the constraint can only be
/// met with zero false matches.
pub fn compute_fmr1000(genuine: &[f64], imposter: &[f64]) -> Result<f64, EvalError> {
    if genuine.is_empty() || imposter.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let best = rate_points(genuine, imposter)
        .into_iter()
        .filter(|p| p.0 <= 0.001)
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    Ok(best * 100.0)
}

/// Detection error tradeoff curve sampled on `grid + 1` evenly spaced
/// thresholds over [0, 1] plus a virtual threshold above every score.
///
/// Points are sorted by FMR ascending and collapsed to the lowest FNMR per
/// FMR value, so FNMR is non-increasing along the returned list.
pub fn det_curve(
    genuine: &[f64],
    imposter: &[f64],
    grid: usize,
) -> Result<Vec<(f64, f64)>, EvalError> {
    if genuine.is_empty() || imposter.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if grid == 0 {
        return Err(EvalError::Param("DET grid must be positive".into()));
    }
    let mut gen_sorted = genuine.to_vec();
    gen_sorted.sort_unstable_by(f64::total_cmp);
    let mut imp_sorted = imposter.to_vec();
    imp_sorted.sort_unstable_by(f64::total_cmp);
    let ng = genuine.len() as f64;
    let ni = imposter.len() as f64;
    let mut points = Vec::with_capacity(grid + 2);
    for i in 0..=grid {
        let t = i as f64 / grid as f64;
        let imp_ge = imp_sorted.len() - imp_sorted.partition_point(|&s| s < t);
        let gen_lt = gen_sorted.partition_point(|&s| s < t);
        points.push((imp_ge as f64 / ni, gen_lt as f64 / ng));
    }
    points.push((0.0, 1.0));
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        match curve.last() {
            Some(last) if last.0 == p.0 => {} // keep the lower FNMR already stored
            _ => curve.push(p),
        }
    }
    Ok(curve)
}

/// Validated, finger-grouped view of a dataset directory.
fn group_by_finger(
    records: Vec<MinutiaeRecord>,
) -> Result<Vec<(String, Vec<MinutiaeRecord>)>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::DatasetShape("no minutiae files found".into()));
    }
    let mut fingers: Vec<(String, Vec<MinutiaeRecord>)> = Vec::new();
    for r in records {
        match fingers.last_mut() {
            Some((id, group)) if *id == r.finger_id => group.push(r),
            _ => fingers.push((r.finger_id.clone(), vec![r])),
        }
    }
    let impressions = fingers[0].1.len();
    if impressions < 2 {
        return Err(EvalError::DatasetShape(format!(
            "need at least 2 impressions per finger, finger {} has {}",
            fingers[0].0, impressions
        )));
    }
    for (id, group) in &fingers {
        if group.len() != impressions {
            return Err(EvalError::DatasetShape(format!(
                "finger {} has {} impressions, expected {}",
                id,
                group.len(),
                impressions
            )));
        }
    }
    Ok(fingers)
}

/// Build every template and score every protocol pair.
///
/// Genuine: all unordered impression pairs within each finger. Imposter:
/// unordered pairs of first impressions across fingers; the symmetric
/// direction is never scored. Records yielding no valid features score 0
/// against everything. Pair evaluations run in parallel; outputs are in
/// deterministic dataset order.
pub fn protocol_scores(
    dataset: &Path,
    params: &MccParams,
    key: &TransformKey,
    gp: &GreedyParams,
) -> Result<ProtocolScores, EvalError> {
    params.validate()?;
    key.validate()?;
    gp.validate()?;
    let fingers = group_by_finger(read_dataset_dir(dataset)?)?;
    let impressions = fingers[0].1.len();
    let idx = derive_index_set(key, params.l_c())?;

    struct Built {
        impression: String,
        template: Option<CancelableTemplate>,
    }

    let flat: Vec<&MinutiaeRecord> = fingers.iter().flat_map(|(_, g)| g.iter()).collect();
    let built: Vec<(Built, f64, f64)> = flat
        .par_iter()
        .map(|record| -> Result<(Built, f64, f64), EvalError> {
            let t0 = Instant::now();
            let cylinders = build_cylinders(record, params)?;
            let build_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let template = match template_from_features(&cylinders, &idx, key) {
                Ok(t) => Some(t),
                Err(EnrollError::NoValidFeatures) => None,
                Err(e) => return Err(e.into()),
            };
            let transform_s = t1.elapsed().as_secs_f64();
            Ok((
                Built {
                    impression: record.impression_id.clone(),
                    template,
                },
                build_s,
                transform_s,
            ))
        })
        .collect::<Result<_, _>>()?;

    let build_ms = built.iter().map(|b| b.1).sum::<f64>() / built.len() as f64 * 1e3;
    let transform_ms = built.iter().map(|b| b.2).sum::<f64>() / built.len() as f64 * 1e3;
    let built: Vec<Built> = built.into_iter().map(|b| b.0).collect();

    // indices into `built`, which is finger-major
    let finger_count = fingers.len();
    let at = |f: usize, i: usize| &built[f * impressions + i];
    let mut genuine_pairs = Vec::new();
    for f in 0..finger_count {
        for a in 0..impressions {
            for b in a + 1..impressions {
                genuine_pairs.push((f, a, b));
            }
        }
    }
    let mut imposter_pairs = Vec::new();
    for a in 0..finger_count {
        for b in a + 1..finger_count {
            imposter_pairs.push((a, b));
        }
    }

    let pair_score = |x: &Built, y: &Built| -> Result<(f64, f64), EvalError> {
        let t0 = Instant::now();
        let score = match (&x.template, &y.template) {
            (Some(q), Some(e)) => greedy_decision_score(&score_matrix(q, e)?, gp).score,
            _ => 0.0,
        };
        Ok((score, t0.elapsed().as_secs_f64()))
    };

    let genuine_scored: Vec<(GenuineScore, f64)> = genuine_pairs
        .par_iter()
        .map(|&(f, a, b)| -> Result<(GenuineScore, f64), EvalError> {
            let (score, secs) = pair_score(at(f, a), at(f, b))?;
            Ok((
                GenuineScore {
                    finger: fingers[f].0.clone(),
                    impression_a: at(f, a).impression.clone(),
                    impression_b: at(f, b).impression.clone(),
                    score,
                },
                secs,
            ))
        })
        .collect::<Result<_, _>>()?;
    let imposter_scored: Vec<(ImposterScore, f64)> = imposter_pairs
        .par_iter()
        .map(|&(a, b)| -> Result<(ImposterScore, f64), EvalError> {
            let (score, secs) = pair_score(at(a, 0), at(b, 0))?;
            Ok((
                ImposterScore {
                    finger_a: fingers[a].0.clone(),
                    finger_b: fingers[b].0.clone(),
                    score,
                },
                secs,
            ))
        })
        .collect::<Result<_, _>>()?;

    let comparisons = genuine_scored.len() + imposter_scored.len();
    let match_secs: f64 = genuine_scored.iter().map(|g| g.1).sum::<f64>()
        + imposter_scored.iter().map(|i| i.1).sum::<f64>();
    let match_ms = if comparisons == 0 { 0.0 } else { match_secs / comparisons as f64 * 1e3 };

    Ok(ProtocolScores {
        genuine: genuine_scored.into_iter().map(|g| g.0).collect(),
        imposter: imposter_scored.into_iter().map(|i| i.0).collect(),
        timing: StageTiming { build_ms, transform_ms, match_ms },
        fingers: finger_count,
        impressions,
    })
}

/// Metrics over already-computed protocol scores.
pub fn summarize_scores(
    scores: ProtocolScores,
    det_grid: usize,
    histogram_bins: usize,
) -> Result<EvalReport, EvalError> {
    let genuine: Vec<f64> = scores.genuine.iter().map(|g| g.score).collect();
    let imposter: Vec<f64> = scores.imposter.iter().map(|i| i.score).collect();
    let eer = compute_eer(&genuine, &imposter)?;
    let fmr1000 = compute_fmr1000(&genuine, &imposter)?;
    let det = det_curve(&genuine, &imposter, det_grid)?;
    let histogram = ScoreHistogram::from_scores(&genuine, &imposter, histogram_bins);
    Ok(EvalReport {
        genuine: scores.genuine,
        imposter: scores.imposter,
        eer,
        fmr1000,
        det,
        histogram,
        timing: scores.timing,
        fingers: scores.fingers,
        impressions: scores.impressions,
    })
}

/// Score a dataset directory and summarize with default grid sizes.
pub fn run_fvc_protocol(
    dataset: &Path,
    params: &MccParams,
    key: &TransformKey,
    gp: &GreedyParams,
) -> Result<EvalReport, EvalError> {
    let scores = protocol_scores(dataset, params, key, gp)?;
    summarize_scores(scores, DEFAULT_DET_GRID, DEFAULT_HISTOGRAM_BINS)
}

/// Serializable summary written to `report.json`.
#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    eer_percent: f64,
    fmr1000_percent: f64,
    fingers: usize,
    impressions: usize,
    genuine_comparisons: usize,
    imposter_comparisons: usize,
    timing_ms: StageTiming,
    det_points: usize,
    config: &'a serde_json::Value,
}

fn write_file(dir: &Path, name: &str, contents: String) -> Result<(), EvalError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| EvalError::Io { path, source })
}

/// Write the analysis files for a report into `dir`:
/// `scores_genuine.csv` (finger,impression_a,impression_b,score),
/// `scores_imposter.csv` (finger_a,finger_b,score), `det.csv` (fmr,fnmr),
/// `histogram.csv` (bin_lo,bin_hi,genuine,imposter), and `report.json`.
/// `config` is echoed verbatim into the JSON; pass it without secrets.
pub fn write_report_files(
    report: &EvalReport,
    dir: &Path,
    config: &serde_json::Value,
) -> Result<(), EvalError> {
    let mut s = String::from("finger,impression_a,impression_b,score\n");
    for g in &report.genuine {
        s.push_str(&format!(
            "{},{},{},{:.6}\n",
            g.finger, g.impression_a, g.impression_b, g.score
        ));
    }
    write_file(dir, "scores_genuine.csv", s)?;

    let mut s = String::from("finger_a,finger_b,score\n");
    for i in &report.imposter {
        s.push_str(&format!("{},{},{:.6}\n", i.finger_a, i.finger_b, i.score));
    }
    write_file(dir, "scores_imposter.csv", s)?;

    let mut s = String::from("fmr,fnmr\n");
    for (fmr, fnmr) in &report.det {
        s.push_str(&format!("{fmr},{fnmr}\n"));
    }
    write_file(dir, "det.csv", s)?;

    let mut s = String::from("bin_lo,bin_hi,genuine,imposter\n");
    let h = &report.histogram;
    for b in 0..h.bins {
        s.push_str(&format!(
            "{},{},{},{}\n",
            b as f64 / h.bins as f64,
            (b + 1) as f64 / h.bins as f64,
            h.genuine[b],
            h.imposter[b]
        ));
    }
    write_file(dir, "histogram.csv", s)?;

    let json = ReportJson {
        eer_percent: report.eer,
        fmr1000_percent: report.fmr1000,
        fingers: report.fingers,
        impressions: report.impressions,
        genuine_comparisons: report.genuine.len(),
        imposter_comparisons: report.imposter.len(),
        timing_ms: report.timing,
        det_points: report.det.len(),
        config,
    };
    let body = serde_json::to_string_pretty(&json).expect("report serialization");
    write_file(dir, "report.json", body + "\n")
}

/// Synthetic impression noise model. All magnitudes are maxima for the
/// uniform rigid components and standard deviations for the per-minutia
/// jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthNoise {
    pub rotation_deg: f64,
    pub translation_px: f64,
    pub jitter_px: f64,
    pub jitter_rad: f64,
    pub drop_rate: f64,
    pub spurious_rate: f64,
}

impl Default for SynthNoise {
    fn default() -> Self {
        SynthNoise {
            rotation_deg: 15.0,
            translation_px: 20.0,
            jitter_px: 2.0,
            jitter_rad: 0.05,
            drop_rate: 0.1,
            spurious_rate: 0.1,
        }
    }
}

impl SynthNoise {
    /// Every impression becomes an exact copy of the base print.
    pub fn zero() -> Self {
        SynthNoise {
            rotation_deg: 0.0,
            translation_px: 0.0,
            jitter_px: 0.0,
            jitter_rad: 0.0,
            drop_rate: 0.0,
            spurious_rate: 0.0,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        let nonneg = [
            self.rotation_deg,
            self.translation_px,
            self.jitter_px,
            self.jitter_rad,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EvalError::Param("noise magnitudes must be >= 0".into()));
        }
        for rate in [self.drop_rate, self.spurious_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(EvalError::Param("rates must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub fingers: usize,
    pub impressions: usize,
    pub noise: SynthNoise,
    pub seed: u64,
}

const SYNTH_WIDTH: u32 = 388;
const SYNTH_HEIGHT: u32 = 374;
const SYNTH_DPI: u32 = 500;

/// Write a `fingers x impressions` synthetic dataset into `dir` as
/// `<finger>_<impression>.min` files (both identifiers 1-based).
///
/// Each finger is a random base print of 30 to 60 minutiae on a 388x374
/// canvas; each impression applies a rigid rotation about the canvas
/// center, a translation, per-minutia Gaussian jitter, and random
/// drop/spurious edits. Minutiae pushed off the canvas are discarded.
/// Output is a pure function of the parameters.
pub fn synth_dataset(dir: &Path, params: &SynthParams) -> Result<(), EvalError> {
    if params.fingers == 0 || params.impressions == 0 {
        return Err(EvalError::Param("fingers and impressions must be >= 1".into()));
    }
    params.noise.validate()?;
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let noise = &params.noise;
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let jitter_xy = Normal::new(0.0, noise.jitter_px).expect("validated sigma");
    let jitter_theta = Normal::new(0.0, noise.jitter_rad).expect("validated sigma");
    let (w, h) = (SYNTH_WIDTH as f64, SYNTH_HEIGHT as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let max_rot = noise.rotation_deg.to_radians();

    for finger in 1..=params.fingers {
        let n = rng.gen_range(30..=60);
        let base: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.gen_range(0.0..w),
                    rng.gen_range(0.0..h),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        for impression in 1..=params.impressions {
            let rot = rng.gen_range(-max_rot..=max_rot);
            let (sin, cos) = rot.sin_cos();
            let dx = rng.gen_range(-noise.translation_px..=noise.translation_px);
            let dy = rng.gen_range(-noise.translation_px..=noise.translation_px);
            let mut minutiae = Vec::with_capacity(base.len());
            let place = |x: f64, y: f64, theta: f64, out: &mut Vec<Minutia>| {
                let xi = x.round();
                let yi = y.round();
                if xi >= 0.0 && xi < w && yi >= 0.0 && yi < h {
                    out.push(Minutia::new(xi as u32, yi as u32, theta));
                }
            };
            for &(x, y, theta) in &base {
                let dropped = rng.gen::<f64>() < noise.drop_rate;
                let jx = jitter_xy.sample(&mut rng);
                let jy = jitter_xy.sample(&mut rng);
                let jt = jitter_theta.sample(&mut rng);
                if dropped {
                    continue;
                }
                // pixel coordinates have y growing downward while angles
                // grow counterclockwise, so a +rot of the angles pairs with
                // this position matrix
                let rx = cx + cos * (x - cx) + sin * (y - cy) + dx + jx;
                let ry = cy - sin * (x - cx) + cos * (y - cy) + dy + jy;
                place(rx, ry, theta + rot + jt, &mut minutiae);
            }
            for _ in 0..base.len() {
                let spurious = rng.gen::<f64>() < noise.spurious_rate;
                let x = rng.gen_range(0.0..w);
                let y = rng.gen_range(0.0..h);
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                if spurious {
                    place(x, y, theta, &mut minutiae);
                }
            }
            let record = MinutiaeRecord {
                finger_id: finger.to_string(),
                impression_id: impression.to_string(),
                width: Some(SYNTH_WIDTH),
                height: Some(SYNTH_HEIGHT),
                dpi: Some(SYNTH_DPI),
                minutiae,
            };
            write_minutiae_file(&record, &dir.join(format!("{finger}_{impression}.min")))?;
        }
    }
    Ok(())
}

/// Counts of the four two-bit codes, indexed `2*first_bit + second_bit`
/// (00, 01, 10, 11).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CodeFrequencies {
    pub counts: [u64; 4],
}

impl CodeFrequencies {
    fn record_units(&mut self, bits: &crate::bits::Bits) {
        debug_assert_eq!(bits.len() % 2, 0);
        for u in 0..bits.len() / 2 {
            let first = bits.get(2 * u) as usize;
            let second = bits.get(2 * u + 1) as usize;
            self.counts[2 * first + second] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Relative frequencies in code order 00, 01, 10, 11.
    pub fn frequencies(&self) -> [f64; 4] {
        let t = self.total();
        if t == 0 {
            return [0.0; 4];
        }
        self.counts.map(|c| c as f64 / t as f64)
    }
}

/// Number of 0.05-wide histogram bins covering [-1, 1].
pub const DIFF_BINS: usize = 40;

/// Unit-code frequencies before and after the XOR fold, plus a histogram
/// of the halved nested-difference values.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionStats {
    /// Codes in the pre-fold vector (two bits per nested difference).
    pub pre_fold: CodeFrequencies,
    /// Codes in the folded output vector.
    pub folded: CodeFrequencies,
    /// Halved nested differences in 0.05 bins over [-1, 1]; out-of-range
    /// values (possible at depth 3) land in the edge bins.
    pub diff_bins: Vec<u64>,
}

/// Gather distributions from full pipeline traces.
pub fn distribution_stats(traces: &[StageTrace]) -> DistributionStats {
    let mut stats = DistributionStats {
        pre_fold: CodeFrequencies::default(),
        folded: CodeFrequencies::default(),
        diff_bins: vec![0; DIFF_BINS],
    };
    for t in traces {
        stats.pre_fold.record_units(&t.encoded);
        stats.folded.record_units(&t.xored);
        for &e in &t.nested {
            let halved = e / 2.0;
            let slot = ((halved + 1.0) / 2.0 * DIFF_BINS as f64).floor();
            stats.diff_bins[(slot.max(0.0) as usize).min(DIFF_BINS - 1)] += 1;
        }
    }
    stats
}

/// Unit-code frequencies over the protected codes stored in templates.
pub fn template_code_frequencies(templates: &[CancelableTemplate]) -> CodeFrequencies {
    let mut freq = CodeFrequencies::default();
    for t in templates {
        for f in &t.features {
            freq.record_units(&f.e_hat);
        }
    }
    freq
}

/// Convenience: trace every valid cylinder of every record under one key.
pub fn trace_dataset(
    records: &[MinutiaeRecord],
    params: &MccParams,
    key: &TransformKey,
) -> Result<Vec<StageTrace>, EvalError> {
    let idx = derive_index_set(key, params.l_c())?;
    let mut traces = Vec::new();
    for record in records {
        for cyl in build_cylinders(record, params)?.iter().filter(|c| c.valid) {
            traces.push(trace_pipeline(cyl, &idx, key)?);
        }
    }
    Ok(traces)
}

/// Product of `p^k` terms evaluated in log space, for chance-match bounds
/// whose direct product underflows.
pub fn match_probability_bound(terms: &[(f64, u32)]) -> f64 {
    terms
        .iter()
        .map(|&(p, k)| f64::from(k) * p.ln())
        .sum::<f64>()
        .exp()
}
