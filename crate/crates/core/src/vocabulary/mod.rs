//! The wave vocabulary: four DTW k-means models mapping every segmented wave
//! onto a 70-token id space.
//!
//! One clustering model is fit per wave type with k-means++ seeding under DTW
//! distance and DTW barycenter averaging (DBA) as the centroid update, so
//! that members of different lengths average sensibly. Cluster ids map
//! injectively into a fixed global layout:
//!
//! ```text
//! P -> [0, 12)   QRS -> [12, 31)   T -> [31, 45)   BG -> [45, 70)
//! PAD = 70   SEP = 71   MASK = 72   CLS = 73      (table size 74)
//! ```
//!
//! Both the DBA update and each Lloyd iteration are guarded to never increase
//! their cost, which makes the per-iteration inertia sequence provably
//! non-increasing (assignment can only shrink it, and a centroid update is
//! kept only when it does not hurt its own cluster).

mod dtw;
mod kmeans;

pub use dtw::{dtw_distance, dtw_path};
pub use kmeans::{dba_mean, FitReport};

use crate::delineation::{WaveSegment, WaveType};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Cluster counts per wave type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterMap {
    pub p: usize,
    pub qrs: usize,
    pub t: usize,
    pub bg: usize,
}

impl Default for ClusterMap {
    fn default() -> Self {
        Self {
            p: 12,
            qrs: 19,
            t: 14,
            bg: 25,
        }
    }
}

impl ClusterMap {
    pub fn get(&self, t: WaveType) -> usize {
        match t {
            WaveType::P => self.p,
            WaveType::QRS => self.qrs,
            WaveType::T => self.t,
            WaveType::BG => self.bg,
        }
    }

    pub fn total(&self) -> usize {
        self.p + self.qrs + self.t + self.bg
    }

    /// First global token id of the given type's block.
    pub fn offset(&self, t: WaveType) -> u32 {
        (match t {
            WaveType::P => 0,
            WaveType::QRS => self.p,
            WaveType::T => self.p + self.qrs,
            WaveType::BG => self.p + self.qrs + self.t,
        }) as u32
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub clusters_per_type: ClusterMap,
    /// Z-normalize each wave (mean 0, sd 1) before clustering and assignment.
    pub znorm: bool,
    /// Lloyd iteration cap.
    pub max_iters: usize,
    /// DBA refinement passes per centroid update.
    pub dba_iters: usize,
    /// Optional Sakoe-Chiba band for every DTW evaluation.
    pub dtw_band: Option<usize>,
    /// Fitting subsamples at most this many waves per type (seeded draw);
    /// assignment always sees the full corpus.
    pub fit_sample_cap: usize,
    pub seed: u64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            clusters_per_type: ClusterMap::default(),
            znorm: true,
            max_iters: 50,
            dba_iters: 3,
            dtw_band: None,
            fit_sample_cap: 1500,
            seed: 0,
        }
    }
}

/// Waves grouped by type, ready for fitting.
#[derive(Debug, Clone, Default)]
pub struct WavesByType {
    pub p: Vec<Vec<f64>>,
    pub qrs: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
    pub bg: Vec<Vec<f64>>,
}

impl WavesByType {
    pub fn get(&self, t: WaveType) -> &Vec<Vec<f64>> {
        match t {
            WaveType::P => &self.p,
            WaveType::QRS => &self.qrs,
            WaveType::T => &self.t,
            WaveType::BG => &self.bg,
        }
    }

    pub fn push(&mut self, t: WaveType, wave: Vec<f64>) {
        match t {
            WaveType::P => self.p.push(wave),
            WaveType::QRS => self.qrs.push(wave),
            WaveType::T => self.t.push(wave),
            WaveType::BG => self.bg.push(wave),
        }
    }

    /// Collect raw wave slices from a segmented window.
    pub fn extend_from_window(&mut self, samples: &[f64], segments: &[WaveSegment]) {
        for seg in segments {
            if seg.offset <= samples.len() && !seg.is_empty() {
                self.push(seg.wave_type, samples[seg.onset..seg.offset].to_vec());
            }
        }
    }
}

/// Serialized form; field order fixes the canonical byte stream hashed into
/// the fingerprint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TypeModel {
    k: usize,
    centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyData {
    version: u32,
    znorm: bool,
    types: TypeModels,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct TypeModels {
    P: TypeModel,
    QRS: TypeModel,
    T: TypeModel,
    BG: TypeModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    #[serde(flatten)]
    data: VocabularyData,
    fingerprint: String,
}

pub const VOCAB_FORMAT_VERSION: u32 = 1;

impl Vocabulary {
    fn from_parts(znorm: bool, centroids: [(WaveType, Vec<Vec<f64>>); 4]) -> Self {
        let mut map = std::collections::BTreeMap::new();
        for (t, c) in centroids {
            map.insert(t, c);
        }
        let model = |t: WaveType, map: &mut std::collections::BTreeMap<WaveType, Vec<Vec<f64>>>| {
            let centroids = map.remove(&t).unwrap_or_default();
            TypeModel {
                k: centroids.len(),
                centroids,
            }
        };
        let data = VocabularyData {
            version: VOCAB_FORMAT_VERSION,
            znorm,
            types: TypeModels {
                P: model(WaveType::P, &mut map),
                QRS: model(WaveType::QRS, &mut map),
                T: model(WaveType::T, &mut map),
                BG: model(WaveType::BG, &mut map),
            },
        };
        let fingerprint = fingerprint_of(&data);
        Vocabulary { data, fingerprint }
    }

    fn model(&self, t: WaveType) -> &TypeModel {
        match t {
            WaveType::P => &self.data.types.P,
            WaveType::QRS => &self.data.types.QRS,
            WaveType::T => &self.data.types.T,
            WaveType::BG => &self.data.types.BG,
        }
    }

    pub fn centroids(&self, t: WaveType) -> &[Vec<f64>] {
        &self.model(t).centroids
    }

    pub fn znorm(&self) -> bool {
        self.data.znorm
    }

    pub fn cluster_map(&self) -> ClusterMap {
        ClusterMap {
            p: self.data.types.P.k,
            qrs: self.data.types.QRS.k,
            t: self.data.types.T.k,
            bg: self.data.types.BG.k,
        }
    }

    /// Number of wave tokens (70 with the default cluster map).
    pub fn n_wave_tokens(&self) -> usize {
        self.cluster_map().total()
    }

    /// Wave tokens plus the four specials.
    pub fn vocab_size(&self) -> usize {
        self.n_wave_tokens() + 4
    }

    pub fn pad_id(&self) -> u32 {
        self.n_wave_tokens() as u32
    }

    pub fn sep_id(&self) -> u32 {
        self.n_wave_tokens() as u32 + 1
    }

    pub fn mask_id(&self) -> u32 {
        self.n_wave_tokens() as u32 + 2
    }

    pub fn cls_id(&self) -> u32 {
        self.n_wave_tokens() as u32 + 3
    }

    /// Wave type owning a global wave-token id, if it is one.
    pub fn wave_type_of(&self, id: u32) -> Option<WaveType> {
        let map = self.cluster_map();
        for t in WaveType::ALL {
            let lo = map.offset(t);
            if id >= lo && id < lo + map.get(t) as u32 {
                return Some(t);
            }
        }
        None
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Nearest-centroid token id for a wave of the given type; ties break to
    /// the lowest centroid index.
    pub fn assign(&self, wave: &[f64], wave_type: WaveType, band: Option<usize>) -> Result<u32> {
        if wave.is_empty() {
            return Err(Error::EmptyInput("cannot assign an empty wave".into()));
        }
        let model = self.model(wave_type);
        if model.centroids.is_empty() {
            return Err(Error::Precondition(format!(
                "vocabulary has no {wave_type:?} centroids"
            )));
        }
        let w = if self.data.znorm {
            znormalize(wave)
        } else {
            wave.to_vec()
        };
        let mut best = (0usize, f64::INFINITY);
        for (i, c) in model.centroids.iter().enumerate() {
            let d = dtw_distance(&w, c, band);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(self.cluster_map().offset(wave_type) + best.0 as u32)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    /// Parse and re-verify the content fingerprint.
    pub fn from_json(text: &str) -> Result<Self> {
        let vocab: Vocabulary = serde_json::from_str(text)?;
        let expected = fingerprint_of(&vocab.data);
        if vocab.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                got: vocab.fingerprint,
            });
        }
        for t in WaveType::ALL {
            for c in vocab.centroids(t) {
                if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("{t:?} centroid")));
                }
            }
        }
        Ok(vocab)
    }
}

/// SHA-256 over the canonical serialization (fixed field order, no
/// fingerprint field).
fn fingerprint_of(data: &VocabularyData) -> String {
    let canonical = serde_json::to_string(data).expect("vocabulary data serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-wave z-normalization; near-constant waves collapse to the zero vector.
pub fn znormalize(wave: &[f64]) -> Vec<f64> {
    let n = wave.len() as f64;
    let mean = wave.iter().sum::<f64>() / n;
    let var = wave.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-8 {
        vec![0.0; wave.len()]
    } else {
        wave.iter().map(|v| (v - mean) / sd).collect()
    }
}

/// Fit the four clustering models. Each type needs at least as many waves as
/// clusters.
pub fn fit_vocabulary(waves: &WavesByType, cfg: &VocabConfig) -> Result<(Vocabulary, FitReport)> {
    let mut report = FitReport::default();
    let mut fitted: Vec<(WaveType, Vec<Vec<f64>>)> = Vec::with_capacity(4);
    for t in WaveType::ALL {
        let k = cfg.clusters_per_type.get(t);
        let raw = waves.get(t);
        if raw.len() < k {
            return Err(Error::NotEnoughWaves {
                wave_type: t,
                have: raw.len(),
                need: k,
            });
        }
        let prepared: Vec<Vec<f64>> = if cfg.znorm {
            raw.iter().map(|w| znormalize(w)).collect()
        } else {
            raw.clone()
        };
        let outcome = kmeans::fit_type(&prepared, k, cfg, t);
        report.per_type.push(outcome.stats);
        fitted.push((t, outcome.centroids));
    }
    let [a, b, c, d]: [(WaveType, Vec<Vec<f64>>); 4] =
        fitted.try_into().expect("exactly four wave types");
    Ok((Vocabulary::from_parts(cfg.znorm, [a, b, c, d]), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bump(amp: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let t = (i as f64 - len as f64 / 2.0) / (len as f64 / 5.0);
                amp * (-t * t / 2.0).exp() + rng.gen_range(-0.02..0.02)
            })
            .collect()
    }

    /// Two separated families with ragged lengths; used by several tests.
    fn two_families(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let len = rng.gen_range(20..30);
                bump(1.0, len, &mut rng)
            })
            .collect();
        let neg: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let len = rng.gen_range(20..30);
                bump(-1.0, len, &mut rng)
            })
            .collect();
        (pos, neg)
    }

    fn toy_waves() -> WavesByType {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = WavesByType::default();
        for _ in 0..40 {
            w.push(WaveType::P, bump(rng.gen_range(0.5..1.5), rng.gen_range(15..25), &mut rng));
            w.push(WaveType::QRS, bump(rng.gen_range(-2.0..2.0), rng.gen_range(10..20), &mut rng));
            w.push(WaveType::T, bump(rng.gen_range(0.2..0.8), rng.gen_range(25..40), &mut rng));
            w.push(WaveType::BG, bump(rng.gen_range(-0.1..0.1), rng.gen_range(20..60), &mut rng));
        }
        w
    }

    fn small_cfg() -> VocabConfig {
        VocabConfig {
            clusters_per_type: ClusterMap { p: 3, qrs: 4, t: 3, bg: 5 },
            max_iters: 20,
            ..VocabConfig::default()
        }
    }

    #[test]
    fn default_map_yields_seventy_wave_tokens_and_fixed_specials() {
        let map = ClusterMap::default();
        assert_eq!(map.total(), 70);
        assert_eq!(map.offset(WaveType::P), 0);
        assert_eq!(map.offset(WaveType::QRS), 12);
        assert_eq!(map.offset(WaveType::T), 31);
        assert_eq!(map.offset(WaveType::BG), 45);
    }

    #[test]
    fn single_cluster_of_identical_members_is_that_member() {
        let member = vec![0.5, 1.0, 0.5, 0.0];
        let mut waves = WavesByType::default();
        for t in WaveType::ALL {
            for _ in 0..3 {
                waves.push(t, member.clone());
            }
        }
        let cfg = VocabConfig {
            clusters_per_type: ClusterMap { p: 1, qrs: 1, t: 1, bg: 1 },
            znorm: false,
            ..VocabConfig::default()
        };
        let (vocab, report) = fit_vocabulary(&waves, &cfg).unwrap();
        assert_eq!(vocab.centroids(WaveType::P), &[member.clone()]);
        for stats in &report.per_type {
            assert_eq!(*stats.inertia.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn two_separated_families_reach_purity_one() {
        let (pos, neg) = two_families(7);
        let mut waves = WavesByType::default();
        for w in pos.iter().chain(&neg) {
            for t in WaveType::ALL {
                waves.push(t, w.clone());
            }
        }
        let cfg = VocabConfig {
            clusters_per_type: ClusterMap { p: 2, qrs: 2, t: 2, bg: 2 },
            znorm: false,
            ..VocabConfig::default()
        };
        let (vocab, _) = fit_vocabulary(&waves, &cfg).unwrap();
        // Purity: every member of a family lands on the same centroid, and
        // the two families land on different ones.
        let ids: Vec<u32> = pos
            .iter()
            .map(|w| vocab.assign(w, WaveType::P, None).unwrap())
            .collect();
        let neg_ids: Vec<u32> = neg
            .iter()
            .map(|w| vocab.assign(w, WaveType::P, None).unwrap())
            .collect();
        assert!(ids.iter().all(|&i| i == ids[0]));
        assert!(neg_ids.iter().all(|&i| i == neg_ids[0]));
        assert_ne!(ids[0], neg_ids[0]);
    }

    #[test]
    fn held_out_member_goes_to_its_family_centroid() {
        let (pos, neg) = two_families(13);
        let mut waves = WavesByType::default();
        for w in pos.iter().take(19).chain(neg.iter().take(19)) {
            waves.push(WaveType::P, w.clone());
        }
        for t in [WaveType::QRS, WaveType::T, WaveType::BG] {
            for w in pos.iter().chain(&neg) {
                waves.push(t, w.clone());
            }
        }
        let cfg = VocabConfig {
            clusters_per_type: ClusterMap { p: 2, qrs: 2, t: 2, bg: 2 },
            znorm: false,
            ..VocabConfig::default()
        };
        let (vocab, _) = fit_vocabulary(&waves, &cfg).unwrap();
        let family_id = vocab.assign(&pos[0], WaveType::P, None).unwrap();
        let held_out = vocab.assign(&pos[19], WaveType::P, None).unwrap();
        assert_eq!(held_out, family_id);
    }

    #[test]
    fn inertia_is_non_increasing_and_assignment_is_a_fixed_point() {
        let waves = toy_waves();
        let cfg = small_cfg();
        let (vocab, report) = fit_vocabulary(&waves, &cfg).unwrap();
        for stats in &report.per_type {
            for pair in stats.inertia.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-9,
                    "inertia increased: {:?}",
                    stats.inertia
                );
            }
        }
        // Re-assigning the fit corpus must reproduce the final assignment.
        for (t, stats) in WaveType::ALL.iter().zip(&report.per_type) {
            let offset = vocab.cluster_map().offset(*t);
            for (w, &a) in waves.get(*t).iter().zip(&stats.final_assignment) {
                let id = vocab.assign(w, *t, None).unwrap();
                assert_eq!(id - offset, a as u32);
            }
        }
    }

    #[test]
    fn assignment_ids_stay_inside_the_type_block() {
        let waves = toy_waves();
        let (vocab, _) = fit_vocabulary(&waves, &small_cfg()).unwrap();
        let map = vocab.cluster_map();
        for t in WaveType::ALL {
            for w in waves.get(t) {
                let id = vocab.assign(w, t, None).unwrap();
                assert!(id >= map.offset(t));
                assert!(id < map.offset(t) + map.get(t) as u32);
                assert_eq!(vocab.wave_type_of(id), Some(t));
            }
        }
        assert!(vocab.wave_type_of(map.total() as u32).is_none());
    }

    #[test]
    fn too_few_waves_is_an_error() {
        let mut waves = WavesByType::default();
        waves.push(WaveType::P, vec![1.0, 2.0]);
        let err = fit_vocabulary(&waves, &VocabConfig::default());
        assert!(matches!(err, Err(Error::NotEnoughWaves { .. })));
    }

    #[test]
    fn json_round_trip_preserves_fingerprint() {
        let waves = toy_waves();
        let (vocab, _) = fit_vocabulary(&waves, &small_cfg()).unwrap();
        let text = vocab.to_json();
        let back = Vocabulary::from_json(&text).unwrap();
        assert_eq!(back.fingerprint(), vocab.fingerprint());
        assert_eq!(back.centroids(WaveType::BG), vocab.centroids(WaveType::BG));
    }

    #[test]
    fn tampered_json_is_rejected() {
        let waves = toy_waves();
        let (vocab, _) = fit_vocabulary(&waves, &small_cfg()).unwrap();
        let text = vocab.to_json().replace("\"znorm\": true", "\"znorm\": false");
        assert!(matches!(
            Vocabulary::from_json(&text),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn centroid_assigns_to_itself() {
        let waves = toy_waves();
        let cfg = VocabConfig {
            znorm: false,
            ..small_cfg()
        };
        let (vocab, _) = fit_vocabulary(&waves, &cfg).unwrap();
        for (i, c) in vocab.centroids(WaveType::P).iter().enumerate() {
            let id = vocab.assign(c, WaveType::P, None).unwrap();
            assert_eq!(id, i as u32);
        }
    }

    #[test]
    fn empty_wave_cannot_be_assigned() {
        let waves = toy_waves();
        let (vocab, _) = fit_vocabulary(&waves, &small_cfg()).unwrap();
        assert!(matches!(
            vocab.assign(&[], WaveType::P, None),
            Err(Error::EmptyInput(_))
        ));
    }
}
