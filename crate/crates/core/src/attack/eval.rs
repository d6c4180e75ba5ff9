//! Top-k scoring of a keystroke report against ground-truth labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttackError, KeystrokeReport};
use crate::victim::{ClickLabel, KEY_COUNT};
use crate::wire::Hand;

/// The k values reported everywhere.
pub const TOP_K: [usize; 3] = [1, 3, 5];

/// Slack after a press ends within which a detection still counts, seconds.
const LATE_SLACK: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: u32,
    pub labels: Vec<ClickLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tick_rate: f64,
    pub device_rate: f64,
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AttackError> {
        serde_json::from_str(s).map_err(|e| AttackError::Report(e.to_string()))
    }

    pub fn click_count(&self) -> usize {
        self.users.iter().map(|u| u.labels.len()).sum()
    }
}

/// One labeled keystroke and where its key landed in the matching
/// detection's ranking (`None`: undetected or ranked beyond the depth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredClick {
    pub user_id: u32,
    pub label: ClickLabel,
    pub detected: bool,
    pub rank: Option<usize>,
    pub duration: f64,
}

impl ScoredClick {
    pub fn hit_at(&self, k: usize) -> bool {
        self.rank.is_some_and(|r| r < k)
    }
}

/// For each label, the index of the detection it pairs with. A detection at
/// tick `n` pairs with a label of the same hand when `n / tick_rate` falls
/// between the label's first sample and shortly after its last; labels take
/// the earliest unused detection in order.
pub fn match_labels(labels: &[ClickLabel], detections: &[(u32, Hand)], tick_rate: f64, device_rate: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; detections.len()];
    labels
        .iter()
        .map(|label| {
            let from = label.sample as f64 / device_rate - 1e-6;
            let to = (label.end_sample + 1) as f64 / device_rate + LATE_SLACK;
            let i = detections.iter().enumerate().position(|(i, &(tick, hand))| {
                let t = tick as f64 / tick_rate;
                !used[i] && hand == label.hand && t >= from && t <= to
            })?;
            used[i] = true;
            Some(i)
        })
        .collect()
}

/// Pairs detections with labels. A detection at tick `n` matches a label of
/// the same user and hand when `n / tick_rate` falls between the label's
/// first sample and shortly after its last; labels are taken in order.
pub fn score(report: &KeystrokeReport, truth: &GroundTruth) -> Result<Vec<ScoredClick>, AttackError> {
    let mut out = Vec::new();
    for ut in &truth.users {
        let clicks = report.user(ut.user_id).map(|u| u.clicks.as_slice()).unwrap_or(&[]);
        if clicks.len() > ut.labels.len() {
            return Err(AttackError::LengthMismatch {
                user: ut.user_id,
                detected: clicks.len(),
                truth: ut.labels.len(),
            });
        }
        let detections: Vec<(u32, Hand)> = clicks.iter().map(|c| (c.tick, c.hand)).collect();
        let matched = match_labels(&ut.labels, &detections, truth.tick_rate, truth.device_rate);
        for (label, m) in ut.labels.iter().zip(matched) {
            let (detected, rank) = match m {
                Some(i) => (true, clicks[i].ranking.iter().position(|r| r.key == label.key)),
                None => (false, None),
            };
            out.push(ScoredClick {
                user_id: ut.user_id,
                label: label.clone(),
                detected,
                rank,
                duration: label.duration(truth.device_rate),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub group: String,
    pub n: usize,
    /// Accuracy at each of [`TOP_K`], as fractions.
    pub top: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub undetected: usize,
    /// Chance of a uniform guess being within top-k.
    pub random_baseline: [f64; 3],
    pub groups: Vec<GroupMetric>,
}

fn group_metric(group: String, scored: &[&ScoredClick]) -> GroupMetric {
    let n = scored.len();
    let top = TOP_K.map(|k| {
        if n == 0 {
            0.0
        } else {
            scored.iter().filter(|s| s.hit_at(k)).count() as f64 / n as f64
        }
    });
    GroupMetric { group, n, top }
}

/// Speed quintile labels, fastest (shortest press) first.
pub const SPEED_GROUPS: [&str; 5] = ["speed:0-20", "speed:20-40", "speed:40-60", "speed:60-80", "speed:80-100"];

impl Metrics {
    pub fn from_scored(scored: &[ScoredClick]) -> Self {
        let all: Vec<&ScoredClick> = scored.iter().collect();
        let mut groups = vec![group_metric("all".into(), &all)];
        let mut keyed: BTreeMap<String, Vec<&ScoredClick>> = BTreeMap::new();
        for s in scored {
            keyed.entry(format!("row:{}", s.label.row)).or_default().push(s);
            keyed.entry(format!("hand:{}", if s.label.hand == Hand::Left { "left" } else { "right" })).or_default().push(s);
            keyed.entry(format!("kind:{}", s.label.prompt_kind.as_str())).or_default().push(s);
        }
        groups.extend(keyed.into_iter().map(|(g, v)| group_metric(g, &v)));
        // Quintiles by duration rank; ties broken by input order.
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[a].duration.total_cmp(&scored[b].duration).then(a.cmp(&b)));
        for (q, name) in SPEED_GROUPS.iter().enumerate() {
            let (lo, hi) = (q * order.len() / 5, (q + 1) * order.len() / 5);
            let v: Vec<&ScoredClick> = order[lo..hi].iter().map(|&i| &scored[i]).collect();
            groups.push(group_metric(name.to_string(), &v));
        }
        Metrics {
            total: scored.len(),
            undetected: scored.iter().filter(|s| !s.detected).count(),
            random_baseline: TOP_K.map(|k| k as f64 / KEY_COUNT as f64),
            groups,
        }
    }

    pub fn group(&self, name: &str) -> Option<&GroupMetric> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn top1(&self) -> f64 {
        self.group("all").map_or(0.0, |g| g.top[0])
    }

    /// `group,n,top1,top3,top5`, one row per group.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "n", "top1", "top3", "top5"]).expect("in-memory write");
        for g in &self.groups {
            w.write_record([
                g.group.clone(),
                g.n.to_string(),
                format!("{:.6}", g.top[0]),
                format!("{:.6}", g.top[1]),
                format!("{:.6}", g.top[2]),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

pub fn evaluate(report: &KeystrokeReport, truth: &GroundTruth) -> Result<Metrics, AttackError> {
    Ok(Metrics::from_scored(&score(report, truth)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::PromptKind;

    fn scored(rank: Option<usize>, detected: bool) -> ScoredClick {
        ScoredClick {
            user_id: 1,
            label: ClickLabel {
                sample: 0,
                end_sample: 10,
                key: "a".into(),
                row: 3,
                hand: Hand::Right,
                prompt_index: 0,
                prompt_kind: PromptKind::Sentence,
            },
            detected,
            rank,
            duration: 0.1,
        }
    }

    #[test]
    fn two_of_three() {
        let m = Metrics::from_scored(&[scored(Some(0), true), scored(Some(0), true), scored(Some(4), true)]);
        assert!((m.top1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(format!("{:.2}", m.top1() * 100.0), "66.67");
        assert_eq!(m.group("all").unwrap().top[2], 1.0);
    }

    #[test]
    fn random_baseline() {
        let m = Metrics::from_scored(&[]);
        assert_eq!(format!("{:.2}", m.random_baseline[0] * 100.0), "2.13");
    }

    #[test]
    fn undetected_scores_zero() {
        let m = Metrics::from_scored(&[scored(None, false), scored(None, false)]);
        assert_eq!(m.undetected, 2);
        assert!(m.groups.iter().all(|g| g.top == [0.0; 3]));
    }

    #[test]
    fn csv_header() {
        let m = Metrics::from_scored(&[scored(Some(1), true)]);
        assert!(m.to_csv().starts_with("group,n,top1,top3,top5\nall,1,0.000000,1.000000,1.000000\n"));
    }
}
