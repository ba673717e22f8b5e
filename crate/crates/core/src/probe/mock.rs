use std::collections::HashMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, ProbeError};
use crate::catalog::BandScheme;
use crate::triples::ProbeDataset;

/// Parameters of the offline model. It says "yes" with probability
/// `p_first_high` when the first entity named in the prompt is high
/// frequency and `p_first_low` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub high_threshold: u64,
    pub p_first_high: f64,
    pub p_first_low: f64,
    /// Artificial delay per request.
    pub latency_ms: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 0,
            high_threshold: 100_000,
            p_first_high: 0.8,
            p_first_low: 0.4,
            latency_ms: 0,
        }
    }
}

/// Deterministic frequency-biased stand-in for a chat model.
pub struct MockModel {
    config: MockConfig,
    // longest aliases first so that ties on position go to the longer name
    aliases: Vec<(String, u64)>,
}

impl MockModel {
    pub fn new(config: MockConfig, alias_frequencies: HashMap<String, u64>) -> Self {
        debug_assert!(config.high_threshold >= BandScheme::MIN_HIGH_THRESHOLD);
        let mut aliases: Vec<(String, u64)> = alias_frequencies
            .into_iter()
            .filter(|(a, _)| !a.is_empty())
            .collect();
        aliases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        MockModel { config, aliases }
    }

    /// Collects alias frequencies from dataset entries. An alias shared by
    /// several entities keeps its highest frequency.
    pub fn from_datasets<'a>(
        config: MockConfig,
        datasets: impl IntoIterator<Item = &'a ProbeDataset>,
    ) -> Self {
        let mut map: HashMap<String, u64> = HashMap::new();
        for d in datasets {
            for e in &d.entries {
                let pairs = e
                    .subject_aliases
                    .iter()
                    .map(|a| (a, e.subject_frequency))
                    .chain(e.object_aliases.iter().map(|a| (a, e.object_frequency)));
                for (alias, f) in pairs {
                    let slot = map.entry(alias.clone()).or_insert(f);
                    *slot = (*slot).max(f);
                }
            }
        }
        MockModel::new(config, map)
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Frequency of the entity mentioned first in `text`, if any.
    pub fn first_mentioned(&self, text: &str) -> Option<u64> {
        let mut best: Option<(usize, u64)> = None;
        for (alias, f) in &self.aliases {
            if let Some(pos) = text.find(alias.as_str()) {
                if best.is_none_or(|(p, _)| pos < p) {
                    best = Some((pos, *f));
                }
            }
        }
        best.map(|(_, f)| f)
    }

    fn uniform(&self, request: &ChatRequest) -> f64 {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(request.system.as_bytes());
        h.update([0]);
        h.update(request.user.as_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().unwrap());
        (x >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl ChatBackend for MockModel {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProbeError> {
        if self.config.latency_ms > 0 {
            thread::sleep(Duration::from_millis(self.config.latency_ms));
        }
        let high = self
            .first_mentioned(&request.user)
            .is_some_and(|f| f >= self.config.high_threshold);
        let p = if high {
            self.config.p_first_high
        } else {
            self.config.p_first_low
        };
        let positive = self.uniform(request) < p;
        let (yes, no) = if request.system.contains("'True'") {
            ("True", "False")
        } else {
            ("Yes", "No")
        };
        let word = if positive { yes } else { no };
        if request.system.contains("step by step") {
            Ok(format!("Considering what I know about both names. Final answer: {word}"))
        } else {
            Ok(format!("{word}."))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MockModel {
        let mut m = HashMap::new();
        m.insert("Paris".to_string(), 500_000);
        m.insert("Paris Hilton".to_string(), 50);
        m.insert("Smallville".to_string(), 10);
        MockModel::new(MockConfig::default(), m)
    }

    fn req(system: &str, user: &str) -> ChatRequest {
        ChatRequest {
            model: "mock".into(),
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: 8,
        }
    }

    #[test]
    fn first_mention_prefers_earliest_then_longest() {
        let m = model();
        assert_eq!(m.first_mentioned("Is Smallville near Paris?"), Some(10));
        assert_eq!(m.first_mentioned("Is Paris near Smallville?"), Some(500_000));
        assert_eq!(m.first_mentioned("Is Paris Hilton near Smallville?"), Some(50));
        assert_eq!(m.first_mentioned("nothing here"), None);
    }

    #[test]
    fn replies_are_deterministic_and_use_template_vocabulary() {
        let m = model();
        let q = req("Answer 'Yes' or 'No'.", "Is Paris a twin town of Smallville?");
        let a = m.complete(&q).unwrap();
        assert_eq!(a, m.complete(&q).unwrap());
        assert!(a == "Yes." || a == "No.");
        let s = req("Answer 'True' or 'False'. Think step by step.", "Paris borders Smallville.");
        let b = m.complete(&s).unwrap();
        assert!(b.ends_with("True") || b.ends_with("False"));
    }

    #[test]
    fn positive_rate_tracks_first_entity() {
        let m = model();
        let rate = |first: &str, second: &str| {
            let n = 4000;
            (0..n)
                .filter(|i| {
                    let r = req("'Yes' or 'No'", &format!("#{i}: is {first} tied to {second}?"));
                    m.complete(&r).unwrap() == "Yes."
                })
                .count() as f64
                / n as f64
        };
        assert!((rate("Paris", "Smallville") - 0.8).abs() < 0.03);
        assert!((rate("Smallville", "Paris") - 0.4).abs() < 0.03);
    }
}
