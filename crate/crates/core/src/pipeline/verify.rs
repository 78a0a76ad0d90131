use std::fmt::Write as _;

use super::config::VerifyConfig;
use super::PipelineError;
use crate::bioeval::{eer, mean_std, pair_scores, tar_at_far, welch_t_test, Embedding, PairConfig, PairingMode, ScoreSet, WelchResult};

/// One (pairing mode, FAR target) result.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub mode: PairingMode,
    pub far_target: f64,
    pub tau: f64,
    pub achieved_far: f64,
    pub tar: f64,
    pub eer: f64,
    pub genuine_mean: f64,
    pub genuine_std: f64,
    pub genuine_count: usize,
    pub imposter_mean: f64,
    pub imposter_std: f64,
    pub imposter_count: usize,
    /// Welch test of the baseline genuine scores against this mode's.
    pub t_test: Option<WelchResult>,
    /// This mode's genuine mean minus the baseline's.
    pub mean_shift: Option<f64>,
    /// Set when the report could not be computed; numeric fields are NaN.
    pub error: Option<String>,
}

impl VerificationReport {
    fn failed(mode: PairingMode, far_target: f64, error: String) -> Self {
        Self {
            mode,
            far_target,
            tau: f64::NAN,
            achieved_far: f64::NAN,
            tar: f64::NAN,
            eer: f64::NAN,
            genuine_mean: f64::NAN,
            genuine_std: f64::NAN,
            genuine_count: 0,
            imposter_mean: f64::NAN,
            imposter_std: f64::NAN,
            imposter_count: 0,
            t_test: None,
            mean_shift: None,
            error: Some(error),
        }
    }
}

/// Scores each pairing mode and reports every FAR target. With a baseline,
/// each report carries a Welch test between baseline and mode genuine
/// scores. Failures are per report, never fatal.
pub fn run_verification(
    embeddings: &[Embedding],
    modes: &[PairingMode],
    cfg: &VerifyConfig,
    baseline: Option<&ScoreSet>,
) -> Result<Vec<VerificationReport>, PipelineError> {
    if let Some(first) = embeddings.first() {
        if let Some(bad) = embeddings.iter().find(|e| e.vector.len() != first.vector.len()) {
            return Err(crate::bioeval::BioError::DimensionMismatch(first.vector.len(), bad.vector.len()).into());
        }
    }
    let pair_cfg = PairConfig {
        pairs_per_id: cfg.pairs_per_id,
        max_imposters: cfg.max_imposters,
        seed: cfg.seed,
    };
    let mut reports = Vec::with_capacity(modes.len() * cfg.far_targets.len());
    for &mode in modes {
        let scores = match pair_scores(embeddings, mode, &pair_cfg) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{mode}: {e}");
                reports.extend(cfg.far_targets.iter().map(|&f| VerificationReport::failed(mode, f, e.to_string())));
                continue;
            }
        };
        for &far in &cfg.far_targets {
            reports.push(report_for(&scores, far, baseline).unwrap_or_else(|e| {
                log::warn!("{mode} at FAR {far}: {e}");
                VerificationReport::failed(mode, far, e.to_string())
            }));
        }
    }
    Ok(reports)
}

fn report_for(scores: &ScoreSet, far: f64, baseline: Option<&ScoreSet>) -> Result<VerificationReport, PipelineError> {
    let t = tar_at_far(scores, far)?;
    let (gm, gs) = mean_std(&scores.genuine);
    let (im, is) = mean_std(&scores.imposter);
    let (t_test, mean_shift) = match baseline {
        Some(b) => (
            Some(welch_t_test(&b.genuine, &scores.genuine)?),
            Some(gm - mean_std(&b.genuine).0),
        ),
        None => (None, None),
    };
    Ok(VerificationReport {
        mode: scores.mode,
        far_target: far,
        tau: t.tau,
        achieved_far: t.achieved_far,
        tar: t.tar,
        eer: eer(scores)?,
        genuine_mean: gm,
        genuine_std: gs,
        genuine_count: scores.genuine.len(),
        imposter_mean: im,
        imposter_std: is,
        imposter_count: scores.imposter.len(),
        t_test,
        mean_shift,
        error: None,
    })
}

/// `key: value` blocks separated by blank lines. Absent optional values are
/// written as `none`.
pub fn format_reports(reports: &[VerificationReport]) -> String {
    let mut out = String::new();
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let w = &mut out;
        let mut kv = |k: &str, v: String| writeln!(w, "{k}: {v}").expect("writing to a String");
        kv("mode", r.mode.to_string());
        kv("far_target", r.far_target.to_string());
        kv("tau", r.tau.to_string());
        kv("achieved_far", r.achieved_far.to_string());
        kv("tar", r.tar.to_string());
        kv("eer", r.eer.to_string());
        kv("genuine_mean", r.genuine_mean.to_string());
        kv("genuine_std", r.genuine_std.to_string());
        kv("genuine_count", r.genuine_count.to_string());
        kv("imposter_mean", r.imposter_mean.to_string());
        kv("imposter_std", r.imposter_std.to_string());
        kv("imposter_count", r.imposter_count.to_string());
        kv("t", opt(r.t_test.map(|w| w.t)));
        kv("df", opt(r.t_test.map(|w| w.df)));
        kv("p", opt(r.t_test.map(|w| w.p)));
        kv("mean_shift", opt(r.mean_shift));
        kv("error", r.error.clone().unwrap_or_else(|| "none".into()));
    }
    out
}
