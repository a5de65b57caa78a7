//! Video inputs and tracker selection.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use memrl::bridge::{Endpoint, RemoteTracker};
use memrl::tracker::{ScriptedTable, ScriptedTracker, SimParams, SyntheticTracker, VideoSpec};
use memrl::{Error, Tracker};
use serde::{Deserialize, Serialize};

/// Index file written by `gen` next to the videos it lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub family: String,
    pub length: usize,
    pub seed: u64,
    /// File names relative to the manifest.
    pub videos: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub enum TrackerSpec {
    Synthetic,
    /// Table lookup; without a file every input must itself be a table.
    Scripted(Option<PathBuf>),
    Bridge(Endpoint),
}

impl FromStr for TrackerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.split_once(':') {
            None if s == "synthetic" => Ok(TrackerSpec::Synthetic),
            None if s == "scripted" => Ok(TrackerSpec::Scripted(None)),
            Some(("scripted", file)) if !file.is_empty() => {
                Ok(TrackerSpec::Scripted(Some(file.into())))
            }
            Some(("bridge", endpoint)) => Ok(TrackerSpec::Bridge(endpoint.parse()?)),
            _ => Err(Error::Config(format!(
                "unknown tracker {s:?} (expected synthetic, scripted[:<file>] or bridge:<endpoint>)"
            ))),
        }
    }
}

impl fmt::Display for TrackerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackerSpec::Synthetic => f.write_str("synthetic"),
            TrackerSpec::Scripted(None) => f.write_str("scripted"),
            TrackerSpec::Scripted(Some(p)) => write!(f, "scripted:{}", p.display()),
            TrackerSpec::Bridge(Endpoint::Tcp(addr)) => write!(f, "bridge:tcp://{addr}"),
            TrackerSpec::Bridge(Endpoint::Command(argv)) => write!(f, "bridge:{}", argv.join(" ")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    Spec(VideoSpec),
    Table(ScriptedTable),
}

/// One video to train or evaluate on.
#[derive(Debug, Clone)]
pub struct VideoInput {
    pub video_id: String,
    pub length: usize,
    pub source: Source,
}

impl VideoInput {
    fn from_file(path: &Path) -> Result<Vec<Self>> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "tsv") {
            let table = ScriptedTable::parse(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            return Ok(vec![Self::from_table(path, table)]);
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if value.get("videos").is_some() {
            let manifest: Manifest = serde_json::from_value(value)
                .map_err(Error::from)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let mut out = Vec::new();
            for name in &manifest.videos {
                out.extend(Self::from_file(&base.join(name))?);
            }
            return Ok(out);
        }
        let spec = VideoSpec::from_json(&text)
            .with_context(|| format!("parsing video {}", path.display()))?;
        Ok(vec![Self {
            video_id: spec.video_id.clone(),
            length: spec.length,
            source: Source::Spec(spec),
        }])
    }

    fn from_table(path: &Path, table: ScriptedTable) -> Self {
        let video_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".into());
        Self {
            video_id,
            length: table.video_length(),
            source: Source::Table(table),
        }
    }

    /// Capacity the table fixes, if this input is a table.
    pub fn table_capacity(&self) -> Option<usize> {
        match &self.source {
            Source::Table(t) => Some(t.capacity()),
            Source::Spec(_) => None,
        }
    }
}

/// Expands files, manifests and directories holding a manifest.
pub fn load_inputs(paths: &[PathBuf]) -> Result<Vec<VideoInput>> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_dir() {
            out.extend(VideoInput::from_file(&path.join(MANIFEST))?);
        } else {
            out.extend(VideoInput::from_file(path)?);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for v in &out {
        if !seen.insert(v.video_id.clone()) {
            return Err(Error::Config(format!("video {:?} given twice", v.video_id)).into());
        }
    }
    Ok(out)
}

/// Inputs for a command, applying the tracker's rules: `scripted:<file>`
/// alone stands for its own single video.
pub fn resolve_inputs(tracker: &TrackerSpec, paths: &[PathBuf]) -> Result<Vec<VideoInput>> {
    let mut inputs = load_inputs(paths)?;
    match tracker {
        TrackerSpec::Scripted(Some(file)) => {
            let text =
                fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            let table = ScriptedTable::parse(&text)
                .with_context(|| format!("parsing {}", file.display()))?;
            match inputs.len() {
                0 => inputs.push(VideoInput::from_table(file, table)),
                1 => {
                    let v = &mut inputs[0];
                    if v.length != table.video_length() {
                        return Err(Error::Config(format!(
                            "table {} has T={}, video {:?} has {} frames",
                            file.display(),
                            table.video_length(),
                            v.video_id,
                            v.length
                        ))
                        .into());
                    }
                    v.source = Source::Table(table);
                }
                n => bail!(Error::Config(format!(
                    "scripted:<file> serves one video, got {n} inputs"
                ))),
            }
        }
        TrackerSpec::Scripted(None) => {
            if let Some(v) = inputs.iter().find(|v| v.table_capacity().is_none()) {
                bail!(Error::Config(format!(
                    "the scripted tracker needs table inputs (.tsv); {:?} is a video spec",
                    v.video_id
                )));
            }
        }
        TrackerSpec::Synthetic => {
            if let Some(v) = inputs.iter().find(|v| v.table_capacity().is_some()) {
                bail!(Error::Config(format!(
                    "the synthetic tracker needs video specs; {:?} is a table",
                    v.video_id
                )));
            }
        }
        TrackerSpec::Bridge(_) => {}
    }
    if inputs.is_empty() {
        bail!(Error::Config("no videos given".into()));
    }
    Ok(inputs)
}

/// The bank capacity to use: tables fix it, otherwise `requested`.
pub fn resolve_capacity(
    inputs: &[VideoInput],
    requested: Option<usize>,
    default: usize,
) -> Result<usize> {
    let fixed: std::collections::BTreeSet<usize> = inputs
        .iter()
        .filter_map(VideoInput::table_capacity)
        .collect();
    match (fixed.len(), requested) {
        (0, r) => Ok(r.unwrap_or(default)),
        (1, r) => {
            let n = *fixed.first().expect("one element");
            if let Some(r) = r.filter(|r| *r != n) {
                bail!(Error::Config(format!(
                    "--capacity {r} conflicts with table capacity {n}"
                )));
            }
            Ok(n)
        }
        _ => bail!(Error::Config(format!(
            "tables disagree on capacity: {fixed:?}"
        ))),
    }
}

pub fn open_tracker(
    spec: &TrackerSpec,
    input: &VideoInput,
    capacity: usize,
    sim: &SimParams,
    timeout: Duration,
) -> Result<Box<dyn Tracker>> {
    Ok(match (spec, &input.source) {
        (TrackerSpec::Bridge(endpoint), _) => Box::new(
            RemoteTracker::connect(endpoint, &input.video_id, input.length, capacity, timeout)
                .with_context(|| {
                    format!("connecting to tracker bridge for {:?}", input.video_id)
                })?,
        ),
        (_, Source::Table(table)) => {
            Box::new(ScriptedTracker::new(input.video_id.clone(), table.clone()))
        }
        (_, Source::Spec(video)) => Box::new(SyntheticTracker::new(video.clone(), *sim)?),
    })
}
