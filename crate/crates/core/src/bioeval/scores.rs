use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cosine, BioError, Embedding, SourceTag};

/// Which source each side of a pair is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairingMode {
    OriginalOriginal,
    WatermarkedOriginal,
    WatermarkedWatermarked,
}

impl PairingMode {
    pub const ALL: [PairingMode; 3] = [
        PairingMode::OriginalOriginal,
        PairingMode::WatermarkedOriginal,
        PairingMode::WatermarkedWatermarked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PairingMode::OriginalOriginal => "original-original",
            PairingMode::WatermarkedOriginal => "watermarked-original",
            PairingMode::WatermarkedWatermarked => "watermarked-watermarked",
        }
    }

    /// (probe source, reference source)
    pub fn sources(self) -> (SourceTag, SourceTag) {
        match self {
            PairingMode::OriginalOriginal => (SourceTag::Original, SourceTag::Original),
            PairingMode::WatermarkedOriginal => (SourceTag::Watermarked, SourceTag::Original),
            PairingMode::WatermarkedWatermarked => (SourceTag::Watermarked, SourceTag::Watermarked),
        }
    }
}

impl fmt::Display for PairingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairingMode {
    type Err = BioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PairingMode::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| BioError::InvalidArgument(format!("unknown pairing mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub mode: PairingMode,
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
    /// Identities contributing no genuine pair.
    pub skipped_identities: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConfig {
    /// Cap on genuine pairs per identity (`None` keeps all).
    pub pairs_per_id: Option<usize>,
    /// Imposter pairs are subsampled uniformly (with replacement) above this.
    pub max_imposters: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            pairs_per_id: None,
            max_imposters: 1_000_000,
            seed: 0,
        }
    }
}

/// Scores all within-identity pairs (probe = i-th image, reference = j-th,
/// i < j, in input order) and cross-identity pairs for identities a < b.
///
/// Images of one identity correspond across sources by their position among
/// that identity's images of the same source.
pub fn pair_scores(embeddings: &[Embedding], mode: PairingMode, cfg: &PairConfig) -> Result<ScoreSet, BioError> {
    let (probe_src, ref_src) = mode.sources();
    let mut by_id: BTreeMap<&str, (Vec<&[f32]>, Vec<&[f32]>)> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for e in embeddings {
        let entry = by_id.entry(e.identity.as_str()).or_insert_with(|| {
            order.push(e.identity.as_str());
            (Vec::new(), Vec::new())
        });
        if e.source == probe_src {
            entry.0.push(&e.vector);
        }
        if e.source == ref_src {
            entry.1.push(&e.vector);
        }
    }
    if order.len() < 2 {
        return Err(BioError::InvalidArgument(format!(
            "pairing needs at least 2 identities, found {}",
            order.len()
        )));
    }

    let mut genuine = Vec::new();
    let mut skipped = 0;
    for id in &order {
        let (probes, refs) = &by_id[id];
        let mut taken = 0;
        'outer: for (i, p) in probes.iter().enumerate() {
            for r in refs.iter().skip(i + 1) {
                if cfg.pairs_per_id.is_some_and(|cap| taken >= cap) {
                    break 'outer;
                }
                genuine.push(cosine(p, r)?);
                taken += 1;
            }
        }
        if taken == 0 {
            skipped += 1;
        }
    }
    if genuine.is_empty() {
        return Err(BioError::NoUsableIdentities(mode));
    }
    if skipped > 0 {
        log::warn!("{mode}: {skipped} identities contribute no genuine pair");
    }

    // Cross-identity blocks (a, b), a < b, each holding |probes_a|·|refs_b| pairs.
    let blocks: Vec<(&[&[f32]], &[&[f32]])> = (0..order.len())
        .flat_map(|a| ((a + 1)..order.len()).map(move |b| (a, b)))
        .map(|(a, b)| (by_id[order[a]].0.as_slice(), by_id[order[b]].1.as_slice()))
        .filter(|(p, r)| !p.is_empty() && !r.is_empty())
        .collect();
    let total: usize = blocks.iter().map(|(p, r)| p.len() * r.len()).sum();
    if total == 0 {
        return Err(BioError::InvalidArgument(format!("{mode}: no cross-identity pairs")));
    }
    let mut imposter = Vec::with_capacity(total.min(cfg.max_imposters));
    if total <= cfg.max_imposters {
        for (probes, refs) in &blocks {
            for p in *probes {
                for r in *refs {
                    imposter.push(cosine(p, r)?);
                }
            }
        }
    } else {
        let mut starts = Vec::with_capacity(blocks.len());
        let mut acc = 0;
        for (p, r) in &blocks {
            starts.push(acc);
            acc += p.len() * r.len();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.max_imposters {
            let k = rng.gen_range(0..total);
            let b = starts.partition_point(|&s| s <= k) - 1;
            let (probes, refs) = blocks[b];
            let off = k - starts[b];
            imposter.push(cosine(probes[off / refs.len()], refs[off % refs.len()])?);
        }
    }
    Ok(ScoreSet {
        mode,
        genuine,
        imposter,
        skipped_identities: skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TarAtFar {
    pub tar: f64,
    pub tau: f64,
    pub achieved_far: f64,
}

/// TAR at the smallest imposter-score threshold whose FAR is within `far`.
///
/// When every candidate exceeds the target (ties at the top score), τ is the
/// next float above the highest imposter score and the achieved FAR is 0.
pub fn tar_at_far(scores: &ScoreSet, far: f64) -> Result<TarAtFar, BioError> {
    if !(far > 0.0 && far <= 1.0) {
        return Err(BioError::InvalidArgument(format!("FAR target {far} outside (0,1]")));
    }
    if scores.genuine.is_empty() {
        return Err(BioError::InvalidArgument("no genuine scores".into()));
    }
    let n = scores.imposter.len();
    if (n as f64) * far < 1.0 - 1e-9 {
        return Err(BioError::InsufficientImposters {
            far,
            needed: (1.0 / far).ceil() as usize,
            found: n,
        });
    }
    let mut imp = scores.imposter.clone();
    imp.sort_by(f64::total_cmp);
    // Walk distinct values upward; FAR(τ) = (#imposters ≥ τ)/n shrinks as τ grows.
    let mut tau = None;
    let mut i = 0;
    while i < n {
        let far_here = (n - i) as f64 / n as f64;
        if far_here <= far {
            tau = Some((imp[i], far_here));
            break;
        }
        let v = imp[i];
        while i < n && imp[i] == v {
            i += 1;
        }
    }
    let (tau, achieved_far) = tau.unwrap_or_else(|| (imp[n - 1].next_up(), 0.0));
    let accepted = scores.genuine.iter().filter(|&&s| super::match_decision(s, tau)).count();
    Ok(TarAtFar {
        tar: accepted as f64 / scores.genuine.len() as f64,
        tau,
        achieved_far,
    })
}

/// Equal error rate with FAR(t) = P(imposter ≥ t) and FRR(t) = P(genuine < t),
/// interpolated linearly where the curves cross between sample thresholds.
pub fn eer(scores: &ScoreSet) -> Result<f64, BioError> {
    if scores.genuine.is_empty() || scores.imposter.is_empty() {
        return Err(BioError::InvalidArgument("EER needs genuine and imposter scores".into()));
    }
    let mut gen = scores.genuine.clone();
    let mut imp = scores.imposter.clone();
    gen.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = gen.iter().chain(&imp).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let point = |t: f64| {
        let far = (imp.len() - imp.partition_point(|&s| s < t)) as f64 / ni;
        let frr = gen.partition_point(|&s| s < t) as f64 / ng;
        (far, frr)
    };
    // Curve points from the lowest threshold (FAR 1, FRR 0) to above the top
    // (FAR 0, FRR 1); FAR − FRR is non-increasing along them.
    let mut curve: Vec<(f64, f64)> = thresholds.iter().map(|&t| point(t)).collect();
    curve.push((0.0, 1.0));
    let mut prev = curve[0];
    for &(far, frr) in &curve {
        let d = far - frr;
        if d == 0.0 {
            return Ok(far);
        }
        if d < 0.0 {
            let d0 = prev.0 - prev.1;
            let alpha = d0 / (d0 - d);
            return Ok(prev.0 + alpha * (far - prev.0));
        }
        prev = (far, frr);
    }
    unreachable!("the final curve point always has FAR < FRR")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub edges: Vec<f64>,
    pub below: usize,
    pub above: usize,
}

/// Equal-width bins over [lo, hi]; each bin is right-open except the last.
pub fn score_histogram(scores: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram, BioError> {
    if bins == 0 || !(lo < hi) {
        return Err(BioError::InvalidArgument(format!("histogram needs bins ≥ 1 and lo < hi, got {bins}, [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut h = Histogram {
        counts: vec![0; bins],
        edges,
        below: 0,
        above: 0,
    };
    for &s in scores {
        if s < lo || s.is_nan() {
            h.below += 1;
        } else if s > hi {
            h.above += 1;
        } else {
            // Index from the edges themselves so values on an edge land right of it.
            let b = h.edges[1..bins].partition_point(|&e| e <= s);
            h.counts[b] += 1;
        }
    }
    Ok(h)
}
