//! File formats: raw share and user tables (newline-delimited JSON), corpus
//! persistence, TOML configuration and the exploration-history store.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Deserializer, Serialize};

use crate::cascade::{Cascade, Channel, ShareEvent, TimeframeSchedule};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_APE_EDGES;
use crate::kernel::KernelParams;
use crate::params::{Correction, ModelParams};
use crate::simulate::ONE_WEEK_S;
use crate::weseer::{DEFAULT_BIG_NODE_THRESHOLD, DEFAULT_GRID};

/// Environment variable naming the data root for relative paths and session history.
pub const DATA_DIR_ENV: &str = "CASCADE_DATA_DIR";

/// Resolves a relative path against `$CASCADE_DATA_DIR` when it is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

/// One row of the sharing table. A row without `from_uid` is the article post itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub article_id: String,
    #[serde(default, deserialize_with = "blank_as_none")]
    pub from_uid: Option<String>,
    pub to_uid: String,
    #[serde(default)]
    pub from_type: Option<Channel>,
    pub to_type: Channel,
    /// Epoch seconds.
    pub share_ts: f64,
    /// Epoch seconds.
    pub post_time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m")]
    Male,
    #[serde(rename = "f")]
    Female,
    #[default]
    #[serde(rename = "unknown", alias = "")]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default, deserialize_with = "gender_or_unknown")]
    pub gender: Gender,
    #[serde(default, deserialize_with = "blank_as_none_num")]
    pub age: Option<u32>,
    #[serde(default, deserialize_with = "blank_as_none")]
    pub region: Option<String>,
    pub friend_count: u64,
}

fn blank_as_none<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    Ok(Option::<String>::deserialize(d)?.filter(|s| !s.trim().is_empty()))
}

fn gender_or_unknown<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Gender, D::Error> {
    Ok(Option::<Gender>::deserialize(d)?.unwrap_or_default())
}

fn blank_as_none_num<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<u32>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(u32),
        Str(String),
    }
    match Option::<NumOrStr>::deserialize(d)? {
        None => Ok(None),
        Some(NumOrStr::Num(n)) => Ok(Some(n)),
        Some(NumOrStr::Str(s)) if s.trim().is_empty() => Ok(None),
        Some(NumOrStr::Str(s)) => s.trim().parse().map(Some).map_err(serde::de::Error::custom),
    }
}

fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, row));
    }
    Ok(out)
}

fn write_ndjson<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_users(path: &Path) -> Result<BTreeMap<String, UserRecord>> {
    Ok(read_ndjson::<UserRecord>(path)?
        .into_iter()
        .map(|(_, u)| (u.user_id.clone(), u))
        .collect())
}

pub fn save_users(users: &[UserRecord], path: &Path) -> Result<()> {
    write_ndjson(path, users)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareLoad {
    pub cascades: Vec<Cascade>,
    pub warnings: Vec<String>,
}

/// Builds cascades from a sharing table. Rows are canonicalized per article by
/// `(share_ts, to_uid, from_uid, types)` so row order in the file does not
/// matter. Each share's parent is the most recent earlier share by `from_uid`
/// in the same article; shares whose parent cannot be found attach to the root.
pub fn load_shares(path: &Path, users: &BTreeMap<String, UserRecord>) -> Result<ShareLoad> {
    let rows = read_ndjson::<ShareRow>(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut by_article: BTreeMap<String, Vec<(usize, ShareRow)>> = BTreeMap::new();
    for (line, row) in rows {
        if !(row.share_ts >= row.post_time as f64) {
            return Err(parse_err(
                line,
                format!("share_ts {} precedes post_time {}", row.share_ts, row.post_time),
            ));
        }
        by_article.entry(row.article_id.clone()).or_default().push((line, row));
    }

    let mut warnings = Vec::new();
    let mut unknown_users = std::collections::BTreeSet::new();
    let mut degree_of = |uid: &str| match users.get(uid) {
        Some(u) => u.friend_count,
        None => {
            unknown_users.insert(uid.to_string());
            0
        }
    };

    let mut cascades = Vec::with_capacity(by_article.len());
    for (article_id, mut rows) in by_article {
        rows.sort_by(|(_, a), (_, b)| {
            a.share_ts
                .total_cmp(&b.share_ts)
                .then_with(|| a.from_uid.is_some().cmp(&b.from_uid.is_some()))
                .then_with(|| a.to_uid.cmp(&b.to_uid))
                .then_with(|| a.from_uid.cmp(&b.from_uid))
                .then_with(|| a.to_type.cmp(&b.to_type))
                .then_with(|| a.from_type.cmp(&b.from_type))
        });
        let post_time = rows[0].1.post_time;
        if let Some((line, r)) = rows.iter().find(|(_, r)| r.post_time != post_time) {
            return Err(parse_err(
                *line,
                format!("article {article_id}: post_time {} disagrees with {post_time}", r.post_time),
            ));
        }
        let roots: Vec<&(usize, ShareRow)> = rows.iter().filter(|(_, r)| r.from_uid.is_none()).collect();
        if let Some((line, _)) = roots.get(1) {
            return Err(parse_err(*line, format!("article {article_id}: more than one root row")));
        }

        let mut events = Vec::with_capacity(rows.len() + 1);
        let root_id = 0u64;
        match roots.first() {
            Some((line, r)) => {
                if r.share_ts != post_time as f64 {
                    return Err(parse_err(*line, format!("article {article_id}: root share_ts must equal post_time")));
                }
                events.push(ShareEvent {
                    event_id: root_id,
                    parent_id: None,
                    user_id: r.to_uid.clone(),
                    degree: degree_of(&r.to_uid),
                    channel: r.to_type,
                    parent_channel: None,
                    time_s: 0.0,
                });
            }
            None => {
                warnings.push(format!("article {article_id}: no root row, using an empty root"));
                events.push(ShareEvent {
                    event_id: root_id,
                    parent_id: None,
                    user_id: String::new(),
                    degree: 0,
                    channel: Channel::Other,
                    parent_channel: None,
                    time_s: 0.0,
                });
            }
        }

        let mut latest: HashMap<String, u64> = HashMap::new();
        latest.insert(events[0].user_id.clone(), root_id);
        for (_, r) in rows.iter().filter(|(_, r)| r.from_uid.is_some()) {
            let from = r.from_uid.as_deref().unwrap_or_default();
            let id = events.len() as u64;
            let parent = match latest.get(from) {
                Some(&p) => p,
                None => {
                    warnings.push(format!(
                        "article {article_id}: parent {from:?} of {:?} not found, attached to root",
                        r.to_uid
                    ));
                    root_id
                }
            };
            events.push(ShareEvent {
                event_id: id,
                parent_id: Some(parent),
                user_id: r.to_uid.clone(),
                degree: degree_of(&r.to_uid),
                channel: r.to_type,
                parent_channel: r.from_type,
                time_s: r.share_ts - post_time as f64,
            });
            latest.insert(r.to_uid.clone(), id);
        }
        cascades.push(Cascade::new(article_id, post_time, events, None));
    }
    for uid in unknown_users {
        warnings.push(format!("user {uid:?} has no degree record, using 0"));
    }
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(ShareLoad { cascades, warnings })
}

/// Writes a corpus as a sharing table (one row per event).
pub fn save_shares(corpus: &[Cascade], path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for c in corpus {
        let uid_of: HashMap<u64, &str> = c.events.iter().map(|e| (e.event_id, e.user_id.as_str())).collect();
        for e in &c.events {
            rows.push(ShareRow {
                article_id: c.article_id.clone(),
                from_uid: e.parent_id.and_then(|p| uid_of.get(&p)).map(|s| s.to_string()),
                to_uid: e.user_id.clone(),
                from_type: e.parent_channel,
                to_type: e.channel,
                share_ts: c.post_time as f64 + e.time_s,
                post_time: c.post_time,
            });
        }
    }
    write_ndjson(path, &rows)
}

/// User table with each sharer's degree; demographic fields are left unknown.
pub fn users_from_corpus(corpus: &[Cascade]) -> Vec<UserRecord> {
    let mut users: BTreeMap<&str, u64> = BTreeMap::new();
    for e in corpus.iter().flat_map(|c| &c.events) {
        users.insert(&e.user_id, e.degree);
    }
    users
        .into_iter()
        .map(|(id, d)| UserRecord {
            user_id: id.to_string(),
            gender: Gender::Unknown,
            age: None,
            region: None,
            friend_count: d,
        })
        .collect()
}

/// Canonical corpus file: one cascade per line, ordered by article id.
pub fn save_corpus(corpus: &[Cascade], path: &Path) -> Result<()> {
    let mut sorted: Vec<&Cascade> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    write_ndjson(path, sorted)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Cascade>> {
    let mut out: Vec<Cascade> = read_ndjson::<Cascade>(path)?.into_iter().map(|(_, c)| c).collect();
    out.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    Ok(out)
}

/// Counts reshares within `horizon_s` as each cascade's final size.
pub fn set_final_sizes(corpus: &mut [Cascade], horizon_s: f64) {
    for c in corpus {
        c.final_size = Some(c.reshare_count(horizon_s));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub kernel: KernelParams,
    /// Frame boundaries in minutes; the last is the observation horizon.
    pub schedule: TimeframeSchedule,
    pub n_star_default: f64,
    pub epsilon_subcritical: f64,
    pub min_reshares: u64,
    pub correction: Correction,
    pub n_init: f64,
    pub grid: Vec<f64>,
    pub big_node_threshold: u64,
    pub top_m: usize,
    pub ape_edges: Vec<f64>,
    /// Horizon for ground-truth final sizes, seconds.
    pub truth_horizon_s: f64,
}

impl Default for Config {
    fn default() -> Self {
        let m = ModelParams::default();
        Config {
            kernel: m.kernel,
            schedule: m.schedule,
            n_star_default: m.n_star_default,
            epsilon_subcritical: m.epsilon_subcritical,
            min_reshares: m.min_reshares,
            correction: m.correction,
            n_init: m.n_star_default,
            grid: DEFAULT_GRID.to_vec(),
            big_node_threshold: DEFAULT_BIG_NODE_THRESHOLD,
            top_m: 20,
            ape_edges: DEFAULT_APE_EDGES.to_vec(),
            truth_horizon_s: ONE_WEEK_S,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model_params().validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            kernel: self.kernel,
            n_star_default: self.n_star_default,
            epsilon_subcritical: self.epsilon_subcritical,
            correction: self.correction.clone(),
            schedule: self.schedule.clone(),
            min_reshares: self.min_reshares,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub n_init: f64,
    /// Evaluation timestamp the exploration refers to, seconds since post.
    pub timestamp: f64,
    /// Reference to the APE series this choice produced.
    pub series_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationHistory {
    pub session_id: String,
    pub entries: Vec<HistoryEntry>,
}

/// Append-only per-session history. Appends to one session are serialized by
/// that session's lock; sessions are independent. With a directory each
/// session is mirrored to `<dir>/<session>.ndjson`.
#[derive(Debug, Default)]
pub struct HistoryStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Vec<HistoryEntry>>>>>,
}

fn check_session_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("invalid session id {id:?}")))
    }
}

impl HistoryStore {
    pub fn in_memory() -> Self {
        HistoryStore::default()
    }

    /// Opens (creating if needed) a persistent store and loads existing sessions.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let entries = read_ndjson::<HistoryEntry>(&path)?.into_iter().map(|(_, e)| e).collect();
            sessions.insert(id.to_string(), Arc::new(Mutex::new(entries)));
        }
        Ok(HistoryStore {
            dir: Some(dir.to_path_buf()),
            sessions: RwLock::new(sessions),
        })
    }

    fn session(&self, id: &str) -> Arc<Mutex<Vec<HistoryEntry>>> {
        if let Some(s) = self.sessions.read().expect("history lock").get(id) {
            return s.clone();
        }
        self.sessions
            .write()
            .expect("history lock")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// Appends an entry and returns the session's new length.
    pub fn append(&self, session_id: &str, entry: HistoryEntry) -> Result<usize> {
        check_session_id(session_id)?;
        let session = self.session(session_id);
        let mut entries = session.lock().expect("session lock");
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{session_id}.ndjson"));
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut line = serde_json::to_vec(&entry).map_err(|e| Error::io(&path, e.into()))?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(&path, e))?;
        }
        entries.push(entry);
        Ok(entries.len())
    }

    pub fn list(&self, session_id: &str) -> Result<ExplorationHistory> {
        check_session_id(session_id)?;
        let entries = match self.sessions.read().expect("history lock").get(session_id) {
            Some(s) => s.lock().expect("session lock").clone(),
            None => Vec::new(),
        };
        Ok(ExplorationHistory {
            session_id: session_id.to_string(),
            entries,
        })
    }
}
