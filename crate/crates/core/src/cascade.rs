//! Cascade domain types: share events, the reshare tree of one article, and
//! the uneven timeframe schedule used to bin the observation window.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EventId = u64;

/// Sharing channel of a single share (`to_type` / `from_type` in the raw tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Moments,
    PrivateChat,
    GroupChat,
    Favorites,
    Other,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Moments,
        Channel::PrivateChat,
        Channel::GroupChat,
        Channel::Favorites,
        Channel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Moments => "moments",
            Channel::PrivateChat => "private_chat",
            Channel::GroupChat => "group_chat",
            Channel::Favorites => "favorites",
            Channel::Other => "other",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown channel {s:?}")))
    }
}

/// One node of the reshare tree. The root (the article post itself) has no parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareEvent {
    pub event_id: EventId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<EventId>,
    pub user_id: String,
    /// Friend count of the sharer.
    pub degree: u64,
    pub channel: Channel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_channel: Option<Channel>,
    /// Seconds since the article was posted.
    pub time_s: f64,
}

impl ShareEvent {
    pub fn is_root(&self) -> bool {
        self.parent_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub article_id: String,
    /// Absolute post time, epoch seconds.
    pub post_time: i64,
    pub events: Vec<ShareEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_size: Option<u64>,
}

fn event_order(a: &ShareEvent, b: &ShareEvent) -> std::cmp::Ordering {
    a.time_s
        .total_cmp(&b.time_s)
        .then(a.event_id.cmp(&b.event_id))
}

impl Cascade {
    /// Builds a cascade, sorting events by `(time_s, event_id)`. No validation is
    /// performed; see [`validate_cascade`].
    pub fn new(
        article_id: impl Into<String>,
        post_time: i64,
        mut events: Vec<ShareEvent>,
        final_size: Option<u64>,
    ) -> Self {
        events.sort_by(event_order);
        Cascade {
            article_id: article_id.into(),
            post_time,
            events,
            final_size,
        }
    }

    pub fn root(&self) -> Option<&ShareEvent> {
        self.events.iter().find(|e| e.is_root())
    }

    pub fn reshares(&self) -> impl Iterator<Item = &ShareEvent> {
        self.events.iter().filter(|e| !e.is_root())
    }

    /// Events with `time_s <= t`, in time order.
    pub fn events_until(&self, t_s: f64) -> impl Iterator<Item = &ShareEvent> {
        let end = self.events.partition_point(|e| e.time_s <= t_s);
        self.events[..end].iter()
    }

    /// `R_t`: reshares (root excluded) with `time_s <= t`.
    pub fn reshare_count(&self, t_s: f64) -> u64 {
        self.events_until(t_s).filter(|e| !e.is_root()).count() as u64
    }

    pub fn total_reshares(&self) -> u64 {
        self.reshares().count() as u64
    }

    pub fn event(&self, id: EventId) -> Option<&ShareEvent> {
        self.events.iter().find(|e| e.event_id == id)
    }

    /// Removes one non-root event. Its children are re-attached to its parent so
    /// the counterfactual concerns this single record only.
    pub fn without_event(&self, id: EventId) -> Result<Cascade> {
        let removed = self
            .event(id)
            .ok_or_else(|| Error::invalid(format!("no event {id} in {}", self.article_id)))?;
        let new_parent = match removed.parent_id {
            Some(p) => p,
            None => return Err(Error::invalid("the root event cannot be removed")),
        };
        let removed_channel = removed.parent_channel;
        let events = self
            .events
            .iter()
            .filter(|e| e.event_id != id)
            .map(|e| {
                let mut e = e.clone();
                if e.parent_id == Some(id) {
                    e.parent_id = Some(new_parent);
                    e.parent_channel = removed_channel;
                }
                e
            })
            .collect();
        Ok(Cascade {
            article_id: self.article_id.clone(),
            post_time: self.post_time,
            events,
            final_size: self.final_size,
        })
    }

    /// Inserts an event, keeping the `(time_s, event_id)` order.
    pub fn with_event(&self, event: ShareEvent) -> Cascade {
        let mut events = self.events.clone();
        let at = events.partition_point(|e| event_order(e, &event).is_lt());
        events.insert(at, event);
        Cascade {
            article_id: self.article_id.clone(),
            post_time: self.post_time,
            events,
            final_size: self.final_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    MissingRoot,
    MultipleRoots,
    RootNotAtZero,
    NegativeTime,
    DuplicateId,
    UnknownParent,
    ParentAfterChild,
    Unsorted,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::MissingRoot => "missing-root",
            Rule::MultipleRoots => "multiple-roots",
            Rule::RootNotAtZero => "root-not-at-zero",
            Rule::NegativeTime => "negative-time",
            Rule::DuplicateId => "duplicate-id",
            Rule::UnknownParent => "unknown-parent",
            Rule::ParentAfterChild => "parent-after-child",
            Rule::Unsorted => "unsorted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub event_id: Option<EventId>,
    pub rule: Rule,
}

/// Lists every broken cascade invariant. An empty list means the cascade is valid.
pub fn validate_cascade(cascade: &Cascade) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |event_id, rule| out.push(Violation { event_id, rule });

    let roots: Vec<&ShareEvent> = cascade.events.iter().filter(|e| e.is_root()).collect();
    match roots.as_slice() {
        [] => push(None, Rule::MissingRoot),
        [root] => {
            if root.time_s != 0.0 {
                push(Some(root.event_id), Rule::RootNotAtZero);
            }
        }
        [_, extra @ ..] => {
            for r in extra {
                push(Some(r.event_id), Rule::MultipleRoots);
            }
        }
    }

    let mut seen = HashSet::new();
    let mut times: HashMap<EventId, f64> = HashMap::new();
    for e in &cascade.events {
        if !seen.insert(e.event_id) {
            push(Some(e.event_id), Rule::DuplicateId);
        } else {
            times.insert(e.event_id, e.time_s);
        }
        if !(e.time_s >= 0.0) {
            push(Some(e.event_id), Rule::NegativeTime);
        }
    }

    for e in &cascade.events {
        if let Some(p) = e.parent_id {
            match times.get(&p) {
                None => push(Some(e.event_id), Rule::UnknownParent),
                Some(&tp) if tp > e.time_s => push(Some(e.event_id), Rule::ParentAfterChild),
                Some(_) => {}
            }
        }
    }

    for w in cascade.events.windows(2) {
        if event_order(&w[0], &w[1]).is_gt() {
            push(Some(w[1].event_id), Rule::Unsorted);
        }
    }
    out
}

/// Frame boundaries in minutes, `0 = b_0 < b_1 < ... < b_n = horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeframeSchedule {
    boundaries_min: Vec<f64>,
}

impl TimeframeSchedule {
    pub fn new(boundaries_min: Vec<f64>) -> Result<Self> {
        if boundaries_min.len() < 2 {
            return Err(Error::invalid("schedule needs at least two boundaries"));
        }
        if boundaries_min[0] != 0.0 {
            return Err(Error::invalid("schedule must start at 0"));
        }
        if boundaries_min.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("schedule boundaries must be finite"));
        }
        if boundaries_min.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("schedule boundaries must be strictly increasing"));
        }
        Ok(TimeframeSchedule { boundaries_min })
    }

    pub fn boundaries_min(&self) -> &[f64] {
        &self.boundaries_min
    }

    pub fn boundaries_s(&self) -> Vec<f64> {
        self.boundaries_min.iter().map(|b| b * 60.0).collect()
    }

    pub fn frame_count(&self) -> usize {
        self.boundaries_min.len() - 1
    }

    pub fn horizon_s(&self) -> f64 {
        self.boundaries_min[self.boundaries_min.len() - 1] * 60.0
    }

    /// `[start, end)` of frame `k` in seconds.
    pub fn frame_bounds_s(&self, k: usize) -> Option<(f64, f64)> {
        (k < self.frame_count())
            .then(|| (self.boundaries_min[k] * 60.0, self.boundaries_min[k + 1] * 60.0))
    }

    /// Frame `k` with `b_k <= t < b_{k+1}`.
    pub fn frame_of(&self, t_s: f64) -> Result<usize> {
        if !(t_s >= 0.0) || t_s >= self.horizon_s() {
            return Err(Error::OutOfWindow {
                t_s,
                horizon_s: self.horizon_s(),
            });
        }
        Ok(self.boundaries_min.partition_point(|b| b * 60.0 <= t_s) - 1)
    }

    /// Frame `k` with `b_k < t <= b_{k+1}` (frame 0 for `t = 0`): the most recent
    /// frame that has been observed at time `t`. Valid up to and including the
    /// horizon.
    pub fn observed_frame(&self, t_s: f64) -> Result<usize> {
        if !(t_s >= 0.0) || t_s > self.horizon_s() {
            return Err(Error::OutOfWindow {
                t_s,
                horizon_s: self.horizon_s(),
            });
        }
        Ok(self
            .boundaries_min
            .partition_point(|b| b * 60.0 < t_s)
            .saturating_sub(1))
    }
}

impl Default for TimeframeSchedule {
    /// 10-minute frames to 2 h, 30-minute frames to 8 h, hourly to 20 h, then one
    /// final frame to 24 h.
    fn default() -> Self {
        let mut b: Vec<f64> = (0..=120).step_by(10).map(f64::from).collect();
        b.extend((150..=480).step_by(30).map(f64::from));
        b.extend((540..=1200).step_by(60).map(f64::from));
        b.push(1440.0);
        TimeframeSchedule { boundaries_min: b }
    }
}

impl TryFrom<Vec<f64>> for TimeframeSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TimeframeSchedule::new(v)
    }
}

impl From<TimeframeSchedule> for Vec<f64> {
    fn from(s: TimeframeSchedule) -> Self {
        s.boundaries_min
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn event(id: EventId, parent: Option<EventId>, degree: u64, time_s: f64) -> ShareEvent {
        ShareEvent {
            event_id: id,
            parent_id: parent,
            user_id: format!("u{id}"),
            degree,
            channel: Channel::Moments,
            parent_channel: parent.map(|_| Channel::Moments),
            time_s,
        }
    }

    #[test]
    fn root_only_is_valid() {
        let c = Cascade::new("a", 0, vec![event(0, None, 10, 0.0)], None);
        assert!(validate_cascade(&c).is_empty());
        assert_eq!(c.reshare_count(1e9), 0);
    }

    #[test]
    fn child_before_parent() {
        let c = Cascade::new(
            "a",
            0,
            vec![event(0, None, 10, 0.0), event(1, Some(0), 1, 50.0), event(2, Some(1), 1, 20.0)],
            None,
        );
        let v = validate_cascade(&c);
        assert_eq!(
            v,
            vec![Violation {
                event_id: Some(2),
                rule: Rule::ParentAfterChild
            }]
        );
    }

    #[test]
    fn duplicate_id() {
        let c = Cascade::new(
            "a",
            0,
            vec![event(0, None, 10, 0.0), event(1, Some(0), 1, 5.0), event(1, Some(0), 1, 6.0)],
            None,
        );
        let v = validate_cascade(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DuplicateId);
        assert_eq!(v[0].event_id, Some(1));
    }

    #[test]
    fn other_violations() {
        let c = Cascade {
            article_id: "a".into(),
            post_time: 0,
            events: vec![event(0, None, 1, 3.0), event(1, Some(9), 1, 1.0)],
            final_size: None,
        };
        let rules: Vec<Rule> = validate_cascade(&c).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::RootNotAtZero));
        assert!(rules.contains(&Rule::UnknownParent));
        assert!(rules.contains(&Rule::Unsorted));
        let empty = Cascade::new("b", 0, vec![], None);
        assert_eq!(validate_cascade(&empty)[0].rule, Rule::MissingRoot);
    }

    #[test]
    fn frame_of_default_schedule() {
        let s = TimeframeSchedule::default();
        assert_eq!(s.frame_of(0.0).unwrap(), 0);
        assert_eq!(s.frame_of(599.0).unwrap(), 0);
        assert_eq!(s.frame_of(600.0).unwrap(), 1);
        assert!(matches!(s.frame_of(86400.0), Err(Error::OutOfWindow { .. })));
        assert!(s.frame_of(-1.0).is_err());
        assert_eq!(s.horizon_s(), 86400.0);
        assert_eq!(s.frame_bounds_s(s.frame_count() - 1), Some((72000.0, 86400.0)));
    }

    #[test]
    fn frame_of_matches_interior_boundaries() {
        let s = TimeframeSchedule::default();
        for (k, b) in s.boundaries_s().iter().enumerate().take(s.frame_count()) {
            assert_eq!(s.frame_of(*b).unwrap(), k);
        }
    }

    #[test]
    fn observed_frame_is_right_closed() {
        let s = TimeframeSchedule::default();
        assert_eq!(s.observed_frame(0.0).unwrap(), 0);
        assert_eq!(s.observed_frame(600.0).unwrap(), 0);
        assert_eq!(s.observed_frame(601.0).unwrap(), 1);
        assert_eq!(s.observed_frame(86400.0).unwrap(), s.frame_count() - 1);
        assert!(s.observed_frame(86400.5).is_err());
    }

    #[test]
    fn schedule_rejects_bad_boundaries() {
        assert!(TimeframeSchedule::new(vec![0.0]).is_err());
        assert!(TimeframeSchedule::new(vec![1.0, 2.0]).is_err());
        assert!(TimeframeSchedule::new(vec![0.0, 5.0, 5.0]).is_err());
        assert!(TimeframeSchedule::new(vec![0.0, 5.0, 60.0]).is_ok());
    }

    #[test]
    fn remove_reparents_children() {
        let c = Cascade::new(
            "a",
            0,
            vec![event(0, None, 10, 0.0), event(1, Some(0), 1, 5.0), event(2, Some(1), 1, 6.0)],
            None,
        );
        let d = c.without_event(1).unwrap();
        assert_eq!(d.event(2).unwrap().parent_id, Some(0));
        assert!(validate_cascade(&d).is_empty());
        assert!(c.without_event(0).is_err());
        let back = d.with_event(c.event(1).unwrap().clone());
        assert_eq!(back.events.len(), 3);
        assert_eq!(back.events[1].event_id, 1);
    }
}
