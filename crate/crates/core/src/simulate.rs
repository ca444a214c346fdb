//! Synthetic cascades from a generation-by-generation branching process.
//!
//! Every exposed friend of a node reacts after a kernel-distributed delay `s`
//! and reshares with probability `p(t_node + s)`. With a normalized kernel the
//! number of children of a node with degree `n` is therefore exactly
//! `Binomial(n, ∫ p(t_node + s) phi(s) ds)`, and each child's delay has density
//! proportional to `p(t_node + s) phi(s)`. Both are sampled in closed form for a
//! piecewise-constant `p`.

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{Cascade, Channel, ShareEvent};
use crate::error::{Error, Result};
use crate::kernel::KernelParams;

pub const ONE_DAY_S: f64 = 86_400.0;
pub const ONE_WEEK_S: f64 = 7.0 * ONE_DAY_S;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegreeDist {
    Constant { d: u64 },
    /// Degree `round(exp(N(mu, sigma^2)))`.
    Lognormal { mu: f64, sigma: f64 },
    /// Uniform draw from a list of observed degrees.
    Empirical { values: Vec<u64> },
}

impl DegreeDist {
    pub fn lognormal_with_mean(mean: f64, sigma: f64) -> Self {
        DegreeDist::Lognormal {
            mu: mean.ln() - sigma * sigma / 2.0,
            sigma,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DegreeDist::Constant { d } => *d as f64,
            DegreeDist::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            DegreeDist::Empirical { values } => {
                values.iter().map(|v| *v as f64).sum::<f64>() / values.len() as f64
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DegreeDist::Lognormal { mu, sigma } if !(mu.is_finite() && *sigma >= 0.0) => {
                Err(Error::invalid("lognormal degree needs finite mu and sigma >= 0"))
            }
            DegreeDist::Empirical { values } if values.is_empty() => {
                Err(Error::invalid("empirical degree list is empty"))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> u64 {
        match self {
            DegreeDist::Constant { d } => *d,
            DegreeDist::Lognormal { mu, sigma } => {
                let ln = LogNormal::new(*mu, *sigma).expect("validated lognormal");
                ln.sample(rng).round() as u64
            }
            DegreeDist::Empirical { values } => values[rng.random_range(0..values.len())],
        }
    }
}

/// One segment of a piecewise-constant infectiousness profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PSegment {
    pub start_s: f64,
    pub p: f64,
}

/// Piecewise-constant infectiousness over absolute time. The first segment
/// starts at 0 and the last extends forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PSegment>", into = "Vec<PSegment>")]
pub struct PProfile {
    segments: Vec<PSegment>,
}

impl PProfile {
    pub fn new(segments: Vec<PSegment>) -> Result<Self> {
        if segments.first().map(|s| s.start_s) != Some(0.0) {
            return Err(Error::invalid("p profile must start at time 0"));
        }
        if segments.windows(2).any(|w| w[1].start_s <= w[0].start_s) {
            return Err(Error::invalid("p profile segments must be increasing in time"));
        }
        if segments.iter().any(|s| !(0.0..=1.0).contains(&s.p)) {
            return Err(Error::invalid("p profile values must lie in [0, 1]"));
        }
        Ok(PProfile { segments })
    }

    pub fn constant(p: f64) -> Result<Self> {
        PProfile::new(vec![PSegment { start_s: 0.0, p }])
    }

    pub fn at(&self, t_s: f64) -> f64 {
        let i = self.segments.partition_point(|s| s.start_s <= t_s);
        self.segments[i.max(1) - 1].p
    }

    pub fn sup(&self) -> f64 {
        self.segments.iter().map(|s| s.p).fold(0.0, f64::max)
    }

    pub fn segments(&self) -> &[PSegment] {
        &self.segments
    }

    /// `[start, end)` in absolute seconds for each segment.
    fn spans(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.segments.iter().enumerate().map(|(i, s)| {
            let end = self.segments.get(i + 1).map_or(f64::INFINITY, |n| n.start_s);
            (s.start_s, end, s.p)
        })
    }
}

impl TryFrom<Vec<PSegment>> for PProfile {
    type Error = Error;

    fn try_from(v: Vec<PSegment>) -> Result<Self> {
        PProfile::new(v)
    }
}

impl From<PProfile> for Vec<PSegment> {
    fn from(p: PProfile) -> Self {
        p.segments
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    /// Reaction-time kernel; normalized before sampling.
    pub kernel: KernelParams,
    pub p_profile: PProfile,
    pub degree_dist: DegreeDist,
    /// Degree of the root (the post's audience); defaults to `degree_dist`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_degree: Option<DegreeDist>,
    pub horizon_s: f64,
    pub seed: u64,
    pub max_events: usize,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_s > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if self.max_events == 0 {
            return Err(Error::invalid("max_events must be positive"));
        }
        self.degree_dist.validate()?;
        if let Some(r) = &self.root_degree {
            r.validate()?;
        }
        Ok(())
    }

    /// `sup_t p(t) * E[degree]`.
    pub fn max_branching(&self) -> f64 {
        self.p_profile.sup() * self.degree_dist.mean()
    }
}

const CHANNEL_WEIGHTS: [(Channel, f64); 5] = [
    (Channel::Moments, 0.35),
    (Channel::PrivateChat, 0.30),
    (Channel::GroupChat, 0.30),
    (Channel::Favorites, 0.03),
    (Channel::Other, 0.02),
];

fn sample_channel(rng: &mut impl Rng) -> Channel {
    let mut u: f64 = rng.random();
    for (c, w) in CHANNEL_WEIGHTS {
        if u < w {
            return c;
        }
        u -= w;
    }
    Channel::Other
}

struct Node {
    key: usize,
    time_s: f64,
    degree: u64,
    channel: Channel,
}

/// Offspring segments of a node born at `t`: `(mass_lo, mass_hi, weight)` in
/// kernel-mass coordinates, restricted to delays that land before the horizon.
fn offspring_segments(spec: &SimSpec, k: &KernelParams, t: f64) -> Vec<(f64, f64, f64)> {
    let limit = spec.horizon_s - t;
    spec.p_profile
        .spans()
        .filter_map(|(a, b, p)| {
            let lo = (a - t).max(0.0);
            let hi = (b - t).min(limit);
            if p == 0.0 || hi <= lo {
                return None;
            }
            let (m_lo, m_hi) = (k.cumulative(lo), k.cumulative(hi));
            Some((m_lo, m_hi, p * (m_hi - m_lo)))
        })
        .collect()
}

/// Simulates one cascade. Deterministic in `spec.seed`.
pub fn simulate(spec: &SimSpec) -> Result<Cascade> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.kernel.normalize();
    let root_dist = spec.root_degree.as_ref().unwrap_or(&spec.degree_dist);

    // (key, parent key, time, degree, channel, parent channel)
    let mut raw: Vec<(usize, Option<usize>, f64, u64, Channel, Option<Channel>)> = Vec::new();
    let root = Node {
        key: 0,
        time_s: 0.0,
        degree: root_dist.sample(&mut rng),
        channel: Channel::Other,
    };
    raw.push((0, None, 0.0, root.degree, root.channel, None));
    let mut queue = VecDeque::from([root]);
    let mut capped = false;

    'outer: while let Some(node) = queue.pop_front() {
        let segs = offspring_segments(spec, &k, node.time_s);
        let total: f64 = segs.iter().map(|s| s.2).sum();
        if total <= 0.0 || node.degree == 0 {
            continue;
        }
        let children = Binomial::new(node.degree, total.min(1.0))
            .expect("valid binomial")
            .sample(&mut rng);
        for _ in 0..children {
            let mut u = rng.random::<f64>() * total;
            let seg = segs
                .iter()
                .find(|s| {
                    let hit = u < s.2;
                    u -= s.2;
                    hit
                })
                .unwrap_or(&segs[segs.len() - 1]);
            let m = seg.0 + rng.random::<f64>() * (seg.1 - seg.0);
            let delay = k.inverse_cumulative(m.min(k.total_mass()))?;
            let time_s = node.time_s + delay;
            if !(time_s <= spec.horizon_s) {
                continue;
            }
            if raw.len() > spec.max_events {
                capped = true;
                break 'outer;
            }
            let child = Node {
                key: raw.len(),
                time_s,
                degree: spec.degree_dist.sample(&mut rng),
                channel: sample_channel(&mut rng),
            };
            raw.push((child.key, Some(node.key), time_s, child.degree, child.channel, Some(node.channel)));
            queue.push_back(child);
        }
    }

    raw.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let mut new_id = vec![0u64; raw.len()];
    for (i, r) in raw.iter().enumerate() {
        new_id[r.0] = i as u64;
    }
    let events: Vec<ShareEvent> = raw
        .iter()
        .enumerate()
        .map(|(i, &(_, parent, time_s, degree, channel, parent_channel))| ShareEvent {
            event_id: i as u64,
            parent_id: parent.map(|p| new_id[p]),
            user_id: format!("s{:016x}-{i}", spec.seed),
            degree,
            channel,
            parent_channel,
            time_s,
        })
        .collect();
    let size = events.len() as u64 - 1;
    let cascade = Cascade {
        article_id: format!("sim-{:016x}", spec.seed),
        post_time: 0,
        events,
        final_size: Some(size),
    };
    if capped {
        return Err(Error::CapExceeded {
            cap: spec.max_events,
            partial: Box::new(cascade),
        });
    }
    Ok(cascade)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub spec: SimSpec,
}

/// Base epoch for synthetic post times.
const CORPUS_EPOCH: i64 = 1_500_000_000;

/// Draws `n` articles from a weighted mixture of specs. Article `i` gets id
/// `art-{i:04}`; a run that hits the event cap keeps its truncated cascade.
pub fn simulate_corpus(n: usize, mixture: &[MixtureComponent], seed: u64) -> Result<Vec<Cascade>> {
    if n == 0 {
        return Err(Error::invalid("corpus size must be positive"));
    }
    if mixture.is_empty() || mixture.iter().any(|m| !(m.weight >= 0.0)) {
        return Err(Error::invalid("mixture needs non-negative weights"));
    }
    let total: f64 = mixture.iter().map(|m| m.weight).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("mixture weights sum to zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<SimSpec> = (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let comp = mixture
                .iter()
                .find(|m| {
                    let hit = m.weight > 0.0 && u < m.weight;
                    u -= m.weight;
                    hit
                })
                .or_else(|| mixture.iter().rev().find(|m| m.weight > 0.0))
                .expect("positive weight exists");
            SimSpec {
                seed: rng.next_u64(),
                ..comp.spec.clone()
            }
        })
        .collect();
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut c = match simulate(spec) {
                Ok(c) => c,
                Err(Error::CapExceeded { partial, cap }) => {
                    log::warn!("article {i}: event cap {cap} reached, keeping truncated cascade");
                    *partial
                }
                Err(e) => return Err(e),
            };
            c.article_id = format!("art-{i:04}");
            c.post_time = CORPUS_EPOCH + 600 * i as i64;
            for e in &mut c.events {
                e.user_id = format!("a{i:04}-{}", e.event_id);
            }
            Ok(c)
        })
        .collect()
}

/// Monte-Carlo mean and standard error of the final reshare count, using seeds
/// `spec.seed + run`.
pub fn mc_final_size(spec: &SimSpec, n_runs: usize) -> Result<(f64, f64)> {
    if n_runs == 0 {
        return Err(Error::invalid("need at least one run"));
    }
    if spec.max_branching() >= 1.0 {
        return Err(Error::invalid(format!(
            "spec is not subcritical (sup p * E[degree] = {})",
            spec.max_branching()
        )));
    }
    let sizes = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let run = SimSpec {
                seed: spec.seed.wrapping_add(r),
                ..spec.clone()
            };
            simulate(&run).map(|c| c.final_size.unwrap_or(0) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&sizes))
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Named infectiousness patterns for synthetic corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Sharp early burst, then quick decay.
    ImmediateOutbreak,
    /// Slow build-up to a peak a few hours in, then a long tail.
    RiseAndRecession,
    /// Alternating active and quiet periods through the first day.
    WaveLike,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::ImmediateOutbreak, Pattern::RiseAndRecession, Pattern::WaveLike];

    /// Branching ratio `p(t) * E[degree]` over time.
    fn branching(self) -> Vec<(f64, f64)> {
        const H: f64 = 3600.0;
        match self {
            Pattern::ImmediateOutbreak => vec![(0.0, 1.4), (H, 0.35)],
            Pattern::RiseAndRecession => vec![(0.0, 0.5), (H, 0.85), (4.0 * H, 0.3)],
            Pattern::WaveLike => {
                let mut v: Vec<(f64, f64)> = (0..8)
                    .map(|i| (3.0 * H * i as f64, if i % 2 == 0 { 0.8 } else { 0.3 }))
                    .collect();
                v.push((ONE_DAY_S, 0.3));
                v
            }
        }
    }

    /// Spec with lognormal sharer degrees (mean `mean_degree`, sigma 1) and a
    /// lognormal root audience (mean 2000, sigma 1.2), observed for one week.
    pub fn spec(self, mean_degree: f64) -> SimSpec {
        let segments = self
            .branching()
            .into_iter()
            .map(|(start_s, b)| PSegment {
                start_s,
                p: b / mean_degree,
            })
            .collect();
        SimSpec {
            kernel: KernelParams::default(),
            p_profile: PProfile::new(segments).expect("preset profile is valid"),
            degree_dist: DegreeDist::lognormal_with_mean(mean_degree, 1.0),
            root_degree: Some(DegreeDist::lognormal_with_mean(2000.0, 1.2)),
            horizon_s: ONE_WEEK_S,
            seed: 0,
            max_events: 200_000,
        }
    }
}

/// Equal-weight mixture of the three patterns with mean sharer degree 140.
pub fn default_mixture() -> Vec<MixtureComponent> {
    Pattern::ALL
        .iter()
        .map(|p| MixtureComponent {
            weight: 1.0,
            spec: p.spec(140.0),
        })
        .collect()
}
