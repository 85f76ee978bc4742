//! Synthetic corpus generator for desk-scale end-to-end runs.
//!
//! Labels correlate with three signal channels, each fading to independence
//! as `strength` goes to 0: planted tokens in the text, a per-user
//! reliability propensity, and shifted engagement-count distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::RawRecord;

/// Generator configuration. The default class balance mirrors the benchmark
/// corpus (4238 reliable : 934 unreliable).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    /// Share of label-0 (reliable) records.
    pub reliable_share: f64,
    /// Signal strength in [0, 1]; 0 makes labels independent of all features.
    pub strength: f64,
    /// User pool size; 0 derives max(5, n/3).
    pub n_users: usize,
    /// Per-field probability of a missing value (label-independent).
    pub missing_rate: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            reliable_share: 4238.0 / 5172.0,
            strength: 1.0,
            n_users: 0,
            missing_rate: 0.05,
        }
    }
}

const NEUTRAL_VOCAB: &[&str] = &[
    "hôm", "nay", "thời", "tiết", "bóng", "đá", "trận", "đấu", "thành", "phố", "người", "dân",
    "kinh", "tế", "thị", "trường", "học", "sinh", "trường", "lớp", "giao", "thông", "đường",
    "phố", "du", "lịch", "món", "ăn", "quán", "cà", "phê", "âm", "nhạc", "phim", "ảnh", "sức",
    "khỏe", "bệnh", "viện", "công", "ty", "việc", "làm", "giá", "vàng", "chứng", "khoán",
];

/// Planted markers: rate depends on the label in proportion to `strength`.
const MARKER_A: &str = "sốc";
const MARKER_B: &str = "lừa_đảo";

const IMAGE_SIZES: &[(u32, u32)] = &[(800, 600), (1024, 768), (600, 600), (1280, 720), (640, 960)];

fn marker_prob(label: u8, strength: f64, on_pos: (f64, f64), on_neg: (f64, f64)) -> f64 {
    let (base, slope) = if label == 1 { on_pos } else { on_neg };
    (base + slope * strength).clamp(0.0, 1.0)
}

fn log_normal_count(rng: &mut ChaCha8Rng, mu: f64) -> i64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    (mu + z).exp().round().max(0.0) as i64
}

/// Generate `n` labeled records. Deterministic in `seed`.
pub fn synthesize_corpus(n: usize, seed: u64, spec: &SignalSpec) -> Vec<RawRecord> {
    assert!(n > 0, "corpus size must be positive");
    let s = spec.strength.clamp(0.0, 1.0);
    let n_users = if spec.n_users == 0 {
        (n / 3).max(5)
    } else {
        spec.n_users
    };
    // First quarter of the user pool leans unreliable when strength > 0.
    let n_suspect = (n_users / 4).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label: u8 = u8::from(rng.gen::<f64>() >= spec.reliable_share);

        let p_suspect = marker_prob(label, s, (0.15, 0.60), (0.15, -0.10));
        let user_idx = if rng.gen::<f64>() < p_suspect {
            rng.gen_range(0..n_suspect)
        } else {
            rng.gen_range(n_suspect..n_users.max(n_suspect + 1))
        };

        let n_tokens = rng.gen_range(5..13);
        let mut tokens: Vec<String> = (0..n_tokens)
            .map(|_| NEUTRAL_VOCAB[rng.gen_range(0..NEUTRAL_VOCAB.len())].to_string())
            .collect();
        if rng.gen::<f64>() < marker_prob(label, s, (0.20, 0.70), (0.20, -0.18)) {
            let pos = rng.gen_range(0..=tokens.len());
            tokens.insert(pos, MARKER_A.to_string());
        }
        if rng.gen::<f64>() < marker_prob(label, s, (0.05, 0.45), (0.05, -0.04)) {
            let pos = rng.gen_range(0..=tokens.len());
            tokens.insert(pos, MARKER_B.to_string());
        }
        let text = tokens.join(" ");

        let shift = if label == 1 { s } else { 0.0 };
        let likes = log_normal_count(&mut rng, 3.5 - 1.1 * shift);
        let comments = log_normal_count(&mut rng, 2.5 - 0.9 * shift);
        let shares = log_normal_count(&mut rng, 2.0 - 0.8 * shift);

        let timestamp = rng.gen_range(1_577_836_800..1_609_459_200i64);

        let n_images = if rng.gen::<f64>() < 0.6 {
            0
        } else {
            rng.gen_range(1..4)
        };
        let image_refs: Vec<String> = (0..n_images)
            .map(|j| {
                let (w, h) = IMAGE_SIZES[rng.gen_range(0..IMAGE_SIZES.len())];
                format!("img://{w}x{h}/p{i}_{j}")
            })
            .collect();

        let mut record = RawRecord {
            id: format!("syn{i:06}"),
            user_id: Some(format!("user{user_idx:05}")),
            text: Some(text),
            timestamp: Some(timestamp),
            likes: Some(likes),
            comments: Some(comments),
            shares: Some(shares),
            image_refs,
            label: Some(i64::from(label)),
        };

        // Missingness is label-independent at every strength.
        if rng.gen::<f64>() < spec.missing_rate {
            record.timestamp = None;
        }
        if rng.gen::<f64>() < spec.missing_rate {
            record.likes = None;
        }
        if rng.gen::<f64>() < spec.missing_rate {
            record.comments = None;
        }
        if rng.gen::<f64>() < spec.missing_rate {
            record.shares = None;
        }
        if rng.gen::<f64>() < spec.missing_rate {
            record.text = None;
        }
        out.push(record);
    }
    out
}
