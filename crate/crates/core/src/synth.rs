//! Seeded synthetic corpus with planted user-topic preferences.
//!
//! Every user draws an affinity vector over topics; every news draws a
//! topic and a title from that topic's private word pool (pools are
//! disjoint, so titles fully identify topics). Clicks are sampled with
//! probability ∝ exp(γ·affinity), so γ controls how much learnable
//! signal exists. A configurable fraction of users is "cold": they
//! click (creating graph edges) but their impressions carry empty
//! histories and only a couple of their impressions fall before the
//! test boundary, so their preferences are mostly recoverable through
//! graph neighbors.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::chacha;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_news: usize,
    pub n_topics: usize,
    /// Distinct title tokens, split evenly into per-topic pools.
    pub vocab_size: usize,
    pub title_len: usize,
    /// Click sharpness γ: 0 is unlearnable noise, large values make
    /// clicks follow affinities almost deterministically.
    pub gamma: f64,
    /// Fraction of users that never expose a click history.
    pub cold_fraction: f64,
    /// Pre-roll click count range for warm users (inclusive).
    pub history_min: usize,
    pub history_max: usize,
    pub impressions_per_user: usize,
    pub candidates_per_impression: usize,
    /// How many of a cold user's impressions land before the test
    /// boundary (the rest land after it).
    pub cold_train_impressions: usize,
    /// Fraction of the time span that precedes the test boundary.
    pub test_window_frac: f64,
    /// Probability that a title token is a topic-neutral filler word
    /// (drawn from a shared stopword set outside the topic pools).
    /// 0 keeps titles fully topic-identifying; larger values make them
    /// vague, which shifts signal toward the graph side.
    pub title_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 60,
            n_news: 120,
            n_topics: 4,
            vocab_size: 80,
            title_len: 6,
            gamma: 6.0,
            cold_fraction: 0.0,
            history_min: 3,
            history_max: 8,
            impressions_per_user: 8,
            candidates_per_impression: 5,
            cold_train_impressions: 2,
            test_window_frac: 0.75,
            title_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_news", self.n_news),
            ("n_topics", self.n_topics),
            ("vocab_size", self.vocab_size),
            ("title_len", self.title_len),
            ("impressions_per_user", self.impressions_per_user),
            ("candidates_per_impression", self.candidates_per_impression),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("synth: {name} must be positive")));
            }
        }
        if self.candidates_per_impression > self.n_news {
            return Err(Error::Config(format!(
                "synth: candidates_per_impression ({}) exceeds n_news ({})",
                self.candidates_per_impression, self.n_news
            )));
        }
        if self.vocab_size < self.n_topics {
            return Err(Error::Config(format!(
                "synth: vocab_size ({}) must cover n_topics ({})",
                self.vocab_size, self.n_topics
            )));
        }
        if !(0.0..1.0).contains(&self.cold_fraction) {
            return Err(Error::Config("synth: cold_fraction must be in [0, 1)".into()));
        }
        if self.history_min > self.history_max {
            return Err(Error::Config("synth: history_min exceeds history_max".into()));
        }
        if !(0.0..1.0).contains(&self.test_window_frac) || self.test_window_frac == 0.0 {
            return Err(Error::Config("synth: test_window_frac must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.title_noise) {
            return Err(Error::Config("synth: title_noise must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Planted ground truth for oracle scoring in tests.
pub struct GroundTruth {
    /// Per user, affinity per topic.
    pub user_affinity: Vec<Vec<f64>>,
    /// Per news, its topic.
    pub news_topic: Vec<usize>,
    pub cold_users: Vec<bool>,
    pub test_start: i64,
}

impl GroundTruth {
    /// Oracle score: the user's affinity for the news' topic.
    pub fn oracle_score(&self, user: usize, news: usize) -> f64 {
        self.user_affinity[user][self.news_topic[news]]
    }
}

pub struct SynthData {
    pub news_tsv: String,
    pub behaviors_tsv: String,
    pub affinities_json: String,
    pub truth: GroundTruth,
}

const TIME_BASE: i64 = 1_600_000_000;
const TIME_SPAN: f64 = 2_000_000.0;
/// Shared topic-neutral filler tokens used when `title_noise` > 0.
const STOPWORDS: usize = 8;

/// Weighted draw from exp(γ·affinity[topic(n)]) over the given pool.
fn weighted_click(
    rng: &mut ChaCha8Rng,
    pool: &[usize],
    affinity: &[f64],
    news_topic: &[usize],
    gamma: f64,
) -> usize {
    let weights: Vec<f64> =
        pool.iter().map(|&n| (gamma * affinity[news_topic[n]]).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return pool[i];
        }
        draw -= w;
    }
    pool[pool.len() - 1]
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = chacha(cfg.seed);

    // Disjoint per-topic word pools: token w{i} belongs to topic i mod T.
    let pool_of = |topic: usize| -> Vec<usize> {
        (0..cfg.vocab_size).filter(|i| i % cfg.n_topics == topic).collect()
    };

    let news_topic: Vec<usize> = (0..cfg.n_news).map(|_| rng.gen_range(0..cfg.n_topics)).collect();
    let mut news_tsv = String::new();
    for (j, &topic) in news_topic.iter().enumerate() {
        let pool = pool_of(topic);
        let title: Vec<String> = (0..cfg.title_len)
            .map(|_| {
                if cfg.title_noise > 0.0 && rng.gen_range(0.0..1.0) < cfg.title_noise {
                    format!("s{}", rng.gen_range(0..STOPWORDS))
                } else {
                    format!("w{}", pool[rng.gen_range(0..pool.len())])
                }
            })
            .collect();
        let _ = writeln!(news_tsv, "n{j}\tt{topic}\t{}", title.join(" "));
    }

    // Evenly spaced affinity levels, shuffled per user: every user has
    // a clear topic ranking with a fixed minimum gap, so γ translates
    // directly into click sharpness.
    let levels: Vec<f64> = if cfg.n_topics == 1 {
        vec![0.0]
    } else {
        (0..cfg.n_topics)
            .map(|t| t as f64 / (cfg.n_topics - 1) as f64 * 2.0 - 1.0)
            .collect()
    };
    let user_affinity: Vec<Vec<f64>> = (0..cfg.n_users)
        .map(|_| {
            let mut a = levels.clone();
            a.shuffle(&mut rng);
            a
        })
        .collect();
    let n_cold = (cfg.cold_fraction * cfg.n_users as f64).round() as usize;
    let cold_users: Vec<bool> = (0..cfg.n_users).map(|u| u < n_cold).collect();

    let test_start = TIME_BASE + (cfg.test_window_frac * TIME_SPAN) as i64;
    let all_news: Vec<usize> = (0..cfg.n_news).collect();

    let mut behaviors_tsv = String::new();
    let mut impression_counter = 0usize;
    for u in 0..cfg.n_users {
        let affinity = &user_affinity[u];

        // Pre-roll clicks form the initial history of warm users.
        let mut clicked: Vec<usize> = Vec::new();
        if !cold_users[u] {
            let h = rng.gen_range(cfg.history_min..=cfg.history_max);
            let mut attempts = 0;
            while clicked.len() < h && attempts < 4 * h + 16 {
                attempts += 1;
                let n = weighted_click(&mut rng, &all_news, affinity, &news_topic, cfg.gamma);
                if !clicked.contains(&n) {
                    clicked.push(n);
                }
            }
        }

        // Impression times: warm users spread over the whole span; cold
        // users place a couple before the boundary and the rest after.
        let mut fracs: Vec<f64> = if cold_users[u] {
            let before = cfg.cold_train_impressions.min(cfg.impressions_per_user);
            let mut f: Vec<f64> = (0..before)
                .map(|_| rng.gen_range(0.0..cfg.test_window_frac))
                .collect();
            f.extend(
                (before..cfg.impressions_per_user)
                    .map(|_| rng.gen_range(cfg.test_window_frac..1.0)),
            );
            f
        } else {
            (0..cfg.impressions_per_user).map(|_| rng.gen_range(0.0..1.0)).collect()
        };
        fracs.sort_by(|a, b| a.partial_cmp(b).unwrap());

        for frac in fracs {
            let timestamp = TIME_BASE + (frac * TIME_SPAN) as i64;
            let mut candidates: Vec<usize> =
                all_news.choose_multiple(&mut rng, cfg.candidates_per_impression).copied().collect();
            candidates.sort_unstable();
            let pos = weighted_click(&mut rng, &candidates, affinity, &news_topic, cfg.gamma);

            let history_field = if cold_users[u] {
                String::new()
            } else {
                clicked.iter().map(|n| format!("n{n}")).collect::<Vec<_>>().join(" ")
            };
            let cand_field = candidates
                .iter()
                .map(|&n| format!("n{n}-{}", usize::from(n == pos)))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                behaviors_tsv,
                "i{impression_counter}\tu{u}\t{timestamp}\t{history_field}\t{cand_field}"
            );
            impression_counter += 1;

            if !clicked.contains(&pos) {
                clicked.push(pos);
            }
        }
    }

    let affinities_json = {
        let mut users = serde_json::Map::new();
        for (u, aff) in user_affinity.iter().enumerate() {
            users.insert(format!("u{u}"), serde_json::json!(aff));
        }
        let mut topics = serde_json::Map::new();
        for (j, &t) in news_topic.iter().enumerate() {
            topics.insert(format!("n{j}"), serde_json::json!(format!("t{t}")));
        }
        serde_json::to_string_pretty(&serde_json::json!({
            "user_affinity": users,
            "news_topic": topics,
            "test_start": test_start,
        }))
        .expect("serializable")
    };

    Ok(SynthData {
        news_tsv,
        behaviors_tsv,
        affinities_json,
        truth: GroundTruth { user_affinity, news_topic, cold_users, test_start },
    })
}

/// Generates and writes `news.tsv`, `behaviors.tsv` and
/// `affinities.json` into `dir`.
pub fn write_corpus(cfg: &SynthConfig, dir: &Path) -> Result<SynthData> {
    let data = generate(cfg)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("news.tsv"), &data.news_tsv)?;
    std::fs::write(dir.join("behaviors.tsv"), &data.behaviors_tsv)?;
    std::fs::write(dir.join("affinities.json"), &data.affinities_json)?;
    Ok(data)
}
