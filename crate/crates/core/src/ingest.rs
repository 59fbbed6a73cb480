//! Online ingestion: stream segmentation and per-clip processing.
//!
//! A stream is a time-ordered sequence of [`StreamEvent`]s. [`segment`] (or
//! the incremental [`Segmenter`]) cuts it into fixed-length windows, and
//! [`IngestPipeline::process_clip`] turns one window into memory: extraction,
//! insertion, link building, identity resolution and the global update, in
//! that order.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, Adapters};
use crate::exec::Execution;
use crate::identity::{Assignment, CharacterFact, IdentityBank, IdentityError, DEFAULT_GLOBAL_THRESHOLD};
use crate::index::Embedding;
use crate::links::{self, DEFAULT_K_LINK};
use crate::store::{PyramidStore, StoreError};
use crate::types::{parse_timestamp, ClipNode, FactNode, KeyframeRef, NodeId, TimeSpan};

pub const DEFAULT_CLIP_LEN: f64 = 30.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("events out of order at index {index}: t={t} follows t={previous}")]
    Unordered { index: usize, previous: f64, t: f64 },
    #[error("invalid event on line {line}: {message}")]
    InvalidEvent { line: usize, message: String },
    #[error("clip length must be positive and finite, got {0}")]
    InvalidClipLen(f64),
    #[error("extraction failed for window {window}: {source}")]
    Extraction { window: u64, source: AdapterError },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// One timed observation from the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    /// Seconds from stream start; `"MM:SS"` strings are accepted on input.
    #[serde(deserialize_with = "seconds")]
    pub t: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    /// Face embeddings detected at this instant.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faces: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
}

impl StreamEvent {
    pub fn new(t: f64, text: impl Into<String>) -> Self {
        Self {
            t,
            text: text.into(),
            media: None,
            asr: None,
            speaker: None,
            faces: Vec::new(),
            names: Vec::new(),
        }
    }
}

fn seconds<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    let t = match Raw::deserialize(d)? {
        Raw::Num(n) => n,
        Raw::Text(s) => parse_timestamp(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {s:?}")))?,
    };
    if !t.is_finite() || t < 0.0 {
        return Err(serde::de::Error::custom(format!("timestamp must be a non-negative number, got {t}")));
    }
    Ok(t)
}

/// Reads line-delimited JSON events, skipping blank lines.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<StreamEvent>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::InvalidEvent {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_event(&line).map_err(|message| IngestError::InvalidEvent {
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

/// Parses one event; errors name the offending field.
pub fn parse_event(line: &str) -> Result<StreamEvent, String> {
    let de = &mut serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.into_inner().to_string()
        } else {
            format!("{path}: {}", e.into_inner())
        }
    })
}

/// The events of one window, and nothing later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipObservation {
    /// Window number `k` of `[k·len, (k+1)·len)`.
    pub window: u64,
    pub span: TimeSpan,
    pub events: Vec<StreamEvent>,
    #[serde(default)]
    pub media_refs: Vec<KeyframeRef>,
}

/// Incremental segmentation; feed events in time order.
#[derive(Debug, Clone)]
pub struct Segmenter {
    clip_len: f64,
    current: Option<(u64, Vec<StreamEvent>)>,
    last_t: Option<f64>,
    seen: usize,
}

impl Segmenter {
    pub fn new(clip_len: f64) -> Result<Self, IngestError> {
        if !(clip_len.is_finite() && clip_len > 0.0) {
            return Err(IngestError::InvalidClipLen(clip_len));
        }
        Ok(Self {
            clip_len,
            current: None,
            last_t: None,
            seen: 0,
        })
    }

    pub fn window_of(&self, t: f64) -> u64 {
        (t / self.clip_len).floor() as u64
    }

    /// Adds an event; returns the previous window once an event lands past it.
    pub fn push(&mut self, event: StreamEvent) -> Result<Option<ClipObservation>, IngestError> {
        if let Some(previous) = self.last_t {
            if event.t < previous {
                return Err(IngestError::Unordered {
                    index: self.seen,
                    previous,
                    t: event.t,
                });
            }
        }
        self.seen += 1;
        self.last_t = Some(event.t);
        let w = self.window_of(event.t);
        match &mut self.current {
            Some((cw, events)) if *cw == w => {
                events.push(event);
                Ok(None)
            }
            _ => {
                let done = self.current.replace((w, vec![event]));
                Ok(done.map(|(cw, events)| self.observation(cw, events, false)))
            }
        }
    }

    /// Emits the final, possibly partial, window.
    pub fn finish(mut self) -> Option<ClipObservation> {
        self.current
            .take()
            .map(|(w, events)| self.observation(w, events, true))
    }

    fn observation(&self, window: u64, events: Vec<StreamEvent>, last: bool) -> ClipObservation {
        let start = window as f64 * self.clip_len;
        let full_end = (window + 1) as f64 * self.clip_len;
        // the stream's last clip ends at its last event
        let end = if last {
            self.last_t.unwrap_or(start).clamp(start, full_end)
        } else {
            full_end
        };
        let media_refs = events
            .iter()
            .filter_map(|e| e.media.as_ref().map(|m| KeyframeRef::from_uri(m.clone(), e.t)))
            .collect();
        ClipObservation {
            window,
            span: TimeSpan::new(start, end),
            events,
            media_refs,
        }
    }
}

/// Cuts a whole stream into consecutive half-open windows of `clip_len`
/// seconds. Windows without events produce no clip.
pub fn segment(events: &[StreamEvent], clip_len: f64) -> Result<Vec<ClipObservation>, IngestError> {
    let mut seg = Segmenter::new(clip_len)?;
    let mut out = Vec::new();
    for e in events {
        if let Some(obs) = seg.push(e.clone())? {
            out.push(obs);
        }
    }
    out.extend(seg.finish());
    Ok(out)
}

/// A fact proposed by the extractor, before ids are assigned.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractedFact {
    pub span: TimeSpan,
    pub text: String,
    #[serde(default)]
    pub scene: String,
    #[serde(default)]
    pub asr: String,
    #[serde(default)]
    pub asr_periods: Vec<TimeSpan>,
    #[serde(default)]
    pub name_mentions: Vec<String>,
    #[serde(default)]
    pub keyframes: Vec<KeyframeRef>,
    /// Text with `<face_i>` placeholders referring to [`ExtractionResult::faces`].
    #[serde(default)]
    pub character_text: Option<String>,
    #[serde(default)]
    pub faces: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceObservation {
    pub voice_id: String,
    /// Face index the extractor aligned this voice with.
    pub face: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub facts: Vec<ExtractedFact>,
    pub clip_summary: String,
    #[serde(default)]
    pub clip_scene: String,
    #[serde(default)]
    pub faces: Vec<Embedding>,
    #[serde(default)]
    pub voices: Vec<VoiceObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub clip_len: f64,
    pub k_link: usize,
    pub theta_global: f64,
    pub execution: Execution,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            clip_len: DEFAULT_CLIP_LEN,
            k_link: DEFAULT_K_LINK,
            theta_global: DEFAULT_GLOBAL_THRESHOLD,
            execution: Execution::default(),
        }
    }
}

/// What one clip contributed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub window: u64,
    pub clip: Option<NodeId>,
    pub facts: usize,
    pub clips: usize,
    pub links: usize,
    pub cross_clip_links: usize,
    pub persons_touched: Vec<String>,
    pub persons_created: usize,
    pub global_version: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Streaming ingestion into one store; see [`IngestPipeline::session`].
pub struct IngestSession<'s> {
    pipeline: &'s IngestPipeline<'s>,
    store: &'s mut PyramidStore,
    segmenter: Segmenter,
    done: Option<u64>,
    reports: Vec<IngestReport>,
}

impl IngestSession<'_> {
    /// Adds one event, processing the previous window if this event closes it.
    pub fn push(&mut self, event: StreamEvent) -> Result<Option<&IngestReport>, IngestError> {
        match self.segmenter.push(event)? {
            Some(obs) => self.process(obs),
            None => Ok(None),
        }
    }

    fn process(&mut self, obs: ClipObservation) -> Result<Option<&IngestReport>, IngestError> {
        if self.done.is_some_and(|d| obs.window <= d) {
            return Ok(None);
        }
        let report = self.pipeline.process_clip(self.store, &obs)?;
        self.reports.push(report);
        Ok(self.reports.last())
    }

    /// Window of the newest committed clip.
    pub fn last_window(&self) -> Option<u64> {
        self.pipeline.last_window(self.store)
    }

    pub fn reports(&self) -> &[IngestReport] {
        &self.reports
    }

    /// Ends the stream, committing the trailing window.
    pub fn finish(mut self) -> Result<Vec<IngestReport>, IngestError> {
        if let Some(obs) = self.segmenter.clone().finish() {
            self.process(obs)?;
        }
        Ok(self.reports)
    }

    /// Stops without committing the open window, as after a broken upload;
    /// resending from that window's first event completes the stream.
    pub fn abandon(self) -> Vec<IngestReport> {
        self.reports
    }
}

struct Identities {
    bank: IdentityBank,
    by_face: HashMap<usize, String>,
    assignments: Vec<Assignment>,
}

pub struct IngestPipeline<'a> {
    adapters: &'a Adapters,
    options: IngestOptions,
}

impl<'a> IngestPipeline<'a> {
    pub fn new(adapters: &'a Adapters, options: IngestOptions) -> Self {
        Self { adapters, options }
    }

    pub fn options(&self) -> &IngestOptions {
        &self.options
    }

    /// Segments and processes a whole stream, skipping windows the store
    /// already holds so an interrupted upload can be resent.
    pub fn ingest(
        &self,
        store: &mut PyramidStore,
        events: &[StreamEvent],
    ) -> Result<Vec<IngestReport>, IngestError> {
        let mut session = self.session(store)?;
        for e in events {
            session.push(e.clone())?;
        }
        session.finish()
    }

    /// Incremental ingestion: clips are committed as soon as a later event
    /// closes their window.
    pub fn session<'s>(&'s self, store: &'s mut PyramidStore) -> Result<IngestSession<'s>, IngestError> {
        Ok(IngestSession {
            done: self.last_window(store),
            segmenter: Segmenter::new(self.options.clip_len)?,
            pipeline: self,
            store,
            reports: Vec::new(),
        })
    }

    /// Window number of the newest clip in the store.
    pub fn last_window(&self, store: &PyramidStore) -> Option<u64> {
        store
            .clips()
            .last()
            .map(|c| (c.span.start / self.options.clip_len).floor() as u64)
    }

    pub fn process_clip(
        &self,
        store: &mut PyramidStore,
        obs: &ClipObservation,
    ) -> Result<IngestReport, IngestError> {
        let mut report = IngestReport {
            window: obs.window,
            ..IngestReport::default()
        };
        let extraction = self
            .adapters
            .extractor
            .extract(obs)
            .map_err(|source| IngestError::Extraction {
                window: obs.window,
                source,
            })?;
        if extraction.facts.is_empty() {
            report.warnings.push(format!("window {} produced no facts; skipped", obs.window));
            report.global_version = store.global().version;
            return Ok(report);
        }

        // identities are resolved on a copy and committed with the clip
        let identities = match self.resolve_identities(store.persons(), &extraction.faces) {
            Ok(ids) => Some(ids),
            Err(e) => {
                report.warnings.push(format!("identity resolution skipped: {e}"));
                None
            }
        };
        let by_face = identities.as_ref().map(|i| &i.by_face);

        let (clip_id, fact_ids) = store.peek_ids(extraction.facts.len());
        let mut clip = ClipNode::new(clip_id.clone(), obs.span, extraction.clip_summary.clone());
        clip.scene = extraction.clip_scene.clone();
        let facts: Vec<FactNode> = extraction
            .facts
            .iter()
            .zip(&fact_ids)
            .map(|(ef, id)| {
                let mut f = FactNode::new(id.clone(), clip_id.clone(), ef.span, ef.text.clone());
                f.scene = ef.scene.clone();
                f.asr = ef.asr.clone();
                f.asr_periods = ef.asr_periods.clone();
                f.name_mentions = ef.name_mentions.clone();
                f.keyframes = ef.keyframes.clone();
                f.character_text = ef
                    .character_text
                    .as_ref()
                    .map(|t| rewrite_faces(t, by_face));
                f
            })
            .collect();
        store.add_clip(clip, facts, self.adapters.embedder.as_ref())?;
        report.clip = Some(clip_id.clone());
        report.clips = 1;
        report.facts = fact_ids.len();

        let linked = links::build_links(
            store,
            &fact_ids,
            self.adapters.judge.as_ref(),
            self.options.k_link,
            self.options.execution,
        )?;
        report.links = linked.links;
        report.cross_clip_links = linked.cross_clip_links;
        report.warnings.extend(linked.warnings);

        if let Some(mut ids) = identities {
            for v in &extraction.voices {
                if let Some(pid) = v.face.and_then(|f| ids.by_face.get(&f)) {
                    ids.bank.add_voice_ref(pid, &v.voice_id).expect("assigned person exists");
                }
            }
            let mut touched: Vec<String> = Vec::new();
            for a in &ids.assignments {
                if !touched.contains(&a.person_id) {
                    touched.push(a.person_id.clone());
                }
            }
            for pid in &touched {
                let tag = crate::identity::person_tag(pid);
                let facts: Vec<CharacterFact> = fact_ids
                    .iter()
                    .filter_map(|id| {
                        let text = store.fact(id)?.character_text.as_ref()?;
                        text.contains(&tag).then(|| CharacterFact {
                            node: id.clone(),
                            text: text.clone(),
                        })
                    })
                    .collect();
                if facts.is_empty() {
                    continue;
                }
                if let Err(e) = ids.bank.update_profile(pid, &facts, self.adapters.profiler.as_ref()) {
                    report.warnings.push(format!("profile of {pid} unchanged: {e}"));
                }
            }
            report.persons_created = ids.assignments.iter().filter(|a| a.created).count();
            store.replace_persons(ids.bank, &touched)?;
            report.persons_touched = touched;
        }

        if let Err(e) = store.integrate_pending(self.adapters.updater.as_ref()) {
            report.warnings.push(format!("global summary not updated, will retry with the next clip: {e}"));
        }
        report.global_version = store.global().version;
        Ok(report)
    }

    fn resolve_identities(
        &self,
        bank: &IdentityBank,
        faces: &[Embedding],
    ) -> Result<Identities, IdentityError> {
        let locals = self.adapters.clusterer.cluster(faces)?;
        let mut bank = bank.clone();
        let assignments = bank.merge_global(&locals, self.options.theta_global)?;
        let mut by_face = HashMap::new();
        for a in &assignments {
            for &m in &locals[a.cluster].members {
                by_face.insert(m, a.person_id.clone());
            }
        }
        Ok(Identities {
            bank,
            by_face,
            assignments,
        })
    }
}

/// Replaces `<face_i>` placeholders with person tags; unknown faces stay.
fn rewrite_faces(text: &str, by_face: Option<&HashMap<usize, String>>) -> String {
    let Some(map) = by_face else {
        return text.to_string();
    };
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(at) = rest.find("<face_") {
        out.push_str(&rest[..at]);
        let tail = &rest[at + "<face_".len()..];
        let digits = tail.chars().take_while(char::is_ascii_digit).count();
        let replaced = tail[digits..].starts_with('>')
            && digits > 0
            && tail[..digits]
                .parse::<usize>()
                .ok()
                .and_then(|i| map.get(&i))
                .map(|pid| out.push_str(&crate::identity::person_tag(pid)))
                .is_some();
        if replaced {
            rest = &tail[digits + 1..];
        } else {
            out.push_str("<face_");
            rest = tail;
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64) -> StreamEvent {
        StreamEvent::new(t, format!("event at {t}"))
    }

    #[test]
    fn sixty_five_second_stream() {
        let events: Vec<_> = [0.0, 10.0, 29.9, 30.0, 45.0, 61.0, 65.0].map(ev).to_vec();
        let clips = segment(&events, 30.0).unwrap();
        let spans: Vec<_> = clips.iter().map(|c| (c.span.start, c.span.end)).collect();
        assert_eq!(spans, [(0.0, 30.0), (30.0, 60.0), (60.0, 65.0)]);
        assert_eq!(clips[0].events.len(), 3);
        assert_eq!(clips[1].events.len(), 2);
    }

    #[test]
    fn empty_stream() {
        assert!(segment(&[], 30.0).unwrap().is_empty());
    }

    #[test]
    fn gaps_skip_windows() {
        let clips = segment(&[ev(1.0), ev(95.0)], 30.0).unwrap();
        assert_eq!(clips.iter().map(|c| c.window).collect::<Vec<_>>(), [0, 3]);
        assert_eq!(clips[1].span, TimeSpan::new(90.0, 95.0));
    }

    #[test]
    fn inversion_is_named() {
        let err = segment(&[ev(1.0), ev(5.0), ev(4.0)], 30.0).unwrap_err();
        assert!(matches!(err, IngestError::Unordered { index: 2, .. }));
        assert!(segment(&[ev(1.0)], 0.0).is_err());
    }

    #[test]
    fn event_parsing() {
        let e = parse_event(r#"{"t": "01:05", "text": "hi", "media": "frames/1.jpg"}"#).unwrap();
        assert_eq!(e.t, 65.0);
        assert_eq!(e.media.as_deref(), Some("frames/1.jpg"));
        let err = parse_event(r#"{"t": 3, "text": 7}"#).unwrap_err();
        assert!(err.starts_with("text:"), "{err}");
        let err = parse_event(r#"{"t": -1, "text": "x"}"#).unwrap_err();
        assert!(err.contains("non-negative"), "{err}");
    }

    #[test]
    fn read_events_reports_line() {
        let src = "{\"t\":1,\"text\":\"a\"}\n\n{\"t\":2}\n";
        let err = read_events(src.as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::InvalidEvent { line: 3, .. }), "{err}");
    }

    #[test]
    fn face_placeholders_rewrite() {
        let map: HashMap<usize, String> = [(0, "p-1".to_string()), (1, "p-2".to_string())].into();
        assert_eq!(
            rewrite_faces("<face_0> greets <face_1> and <face_7>; <face_x>", Some(&map)),
            "<p-1> greets <p-2> and <face_7>; <face_x>"
        );
        assert_eq!(rewrite_faces("<face_0>", None), "<face_0>");
    }
}
