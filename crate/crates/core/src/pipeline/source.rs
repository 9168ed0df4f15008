//! Match sources and the two-stage live pipeline: a producer reading frames
//! and a consumer tracking them, joined by a one-frame slot where a newer
//! frame replaces one that has not been picked up yet.

use std::ops::Range;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};

use crate::bench::SyntheticFrame;
use crate::error::{IoError, PipelineError};
use crate::mismatch::{read_matches, MatchSet};

use super::{process_frame, FrameResult, PipelineConfig, Template};

#[derive(Debug)]
pub struct SourceFrame {
    pub id: usize,
    pub matches: Result<MatchSet, IoError>,
}

/// Supplies the matches of successive frames.
pub trait MatchSource {
    fn next_frame(&mut self) -> Option<SourceFrame>;
}

/// One CSV match file per frame; labels, if present, are ignored.
#[derive(Debug, Clone)]
pub struct FileSource {
    paths: Vec<PathBuf>,
    next: usize,
}

impl FileSource {
    pub fn new(paths: Vec<PathBuf>) -> Self {
        Self { paths, next: 0 }
    }
}

impl MatchSource for FileSource {
    fn next_frame(&mut self) -> Option<SourceFrame> {
        let path = self.paths.get(self.next)?;
        let id = self.next;
        self.next += 1;
        Some(SourceFrame {
            id,
            matches: read_matches(path).map(|(m, _)| m),
        })
    }
}

/// Matches of generated frames, optionally blanking a range of frames to
/// simulate the object leaving the view.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    frames: Vec<MatchSet>,
    next: usize,
}

impl SyntheticSource {
    pub fn new(frames: &[SyntheticFrame]) -> Self {
        Self {
            frames: frames.iter().map(|f| f.matches.clone()).collect(),
            next: 0,
        }
    }

    pub fn with_gap(mut self, gap: Range<usize>) -> Self {
        for k in gap {
            if let Some(m) = self.frames.get_mut(k) {
                *m = MatchSet::empty();
            }
        }
        self
    }
}

impl MatchSource for SyntheticSource {
    fn next_frame(&mut self) -> Option<SourceFrame> {
        let matches = self.frames.get(self.next)?.clone();
        let id = self.next;
        self.next += 1;
        Some(SourceFrame {
            id,
            matches: Ok(matches),
        })
    }
}

/// Single-item handoff where `push` overwrites an item not yet taken.
#[derive(Debug)]
pub struct LatestSlot<T> {
    state: Mutex<SlotState<T>>,
    changed: Condvar,
}

#[derive(Debug)]
struct SlotState<T> {
    item: Option<T>,
    closed: bool,
}

impl<T> Default for LatestSlot<T> {
    fn default() -> Self {
        Self {
            state: Mutex::new(SlotState {
                item: None,
                closed: false,
            }),
            changed: Condvar::new(),
        }
    }
}

impl<T> LatestSlot<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `item`, returning the unconsumed item it replaced. Once the
    /// slot is closed the item is handed back as `Err`.
    pub fn push(&self, item: T) -> Result<Option<T>, T> {
        let mut s = self.state.lock().expect("slot lock poisoned");
        if s.closed {
            return Err(item);
        }
        let old = s.item.replace(item);
        self.changed.notify_all();
        Ok(old)
    }

    /// Waits for an item; `None` once the slot is closed and drained.
    pub fn take(&self) -> Option<T> {
        let mut s = self.state.lock().expect("slot lock poisoned");
        loop {
            if let Some(item) = s.item.take() {
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.changed.wait(s).expect("slot lock poisoned");
        }
    }

    pub fn close(&self) {
        self.state.lock().expect("slot lock poisoned").closed = true;
        self.changed.notify_all();
    }
}

#[derive(Debug, Clone)]
pub struct LiveRun {
    /// Results in frame order.
    pub results: Vec<FrameResult>,
    /// Frames replaced in the slot before the tracker reached them.
    pub dropped: Vec<usize>,
}

/// Runs the source on its own thread and tracks whatever frame is latest
/// whenever the tracker is free. `on_result` sees each result as it is made.
pub fn run_live<S: MatchSource + Send>(
    template: &Template,
    mut source: S,
    cfg: &PipelineConfig,
    mut on_result: impl FnMut(&FrameResult) -> Result<(), PipelineError>,
) -> Result<LiveRun, PipelineError> {
    cfg.validate(template)?;
    let slot = LatestSlot::<SourceFrame>::new();
    std::thread::scope(|scope| {
        let producer = scope.spawn(|| {
            let mut dropped = Vec::new();
            while let Some(frame) = source.next_frame() {
                match slot.push(frame) {
                    Ok(Some(old)) => dropped.push(old.id),
                    Ok(None) => {}
                    Err(_) => break,
                }
            }
            slot.close();
            dropped
        });
        let consumed = (|| {
            let mut results: Vec<FrameResult> = Vec::new();
            while let Some(frame) = slot.take() {
                let prev = results.last().map(|r| &r.shape);
                let result = match frame.matches {
                    Ok(m) => process_frame(template, frame.id, &m, cfg, prev)?,
                    Err(e) => FrameResult::skipped(
                        frame.id,
                        prev.unwrap_or(template.initial_pose()),
                        format!("unreadable matches: {e}"),
                    ),
                };
                on_result(&result)?;
                results.push(result);
            }
            Ok(results)
        })();
        slot.close();
        let dropped = producer.join().expect("match source panicked");
        consumed.map(|results| LiveRun { results, dropped })
    })
}
