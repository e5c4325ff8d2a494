//! Running an external segmentation method under the harness clock.
//!
//! The method is one long-lived subprocess. For every frame the harness
//! writes a request to the method's stdin and waits for the matching response
//! on its stdout before sending the next frame. Both directions use the same
//! framing:
//!
//! ```text
//! u32 LE frame index | raster (binary raster format)
//! ```
//!
//! Requests carry the frame's `MASK` raster; responses must carry a `SCOR`
//! raster with the sequence dimensions. Latency is measured on a monotonic
//! clock from the moment the last request byte has been flushed to the pipe
//! until the last response byte has been read, so request encoding is never
//! charged to the method.

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::io::{
    decode_raster, encode_raster, open_sequence, read_scores, read_timing_csv, write_scores,
    write_timing_csv,
};
use crate::raster::ScoreMap;
use crate::streaming::LatencyProfile;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Where a run's score maps live.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreStore {
    InMemory(Vec<ScoreMap>),
    /// `%06d.scor` files for frames `1..=frames`.
    OnDisk { dir: PathBuf, frames: u32 },
}

impl ScoreStore {
    pub fn len(&self) -> usize {
        match self {
            ScoreStore::InMemory(v) => v.len(),
            ScoreStore::OnDisk { frames, .. } => *frames as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Score map of 1-based frame `index`.
    pub fn get(&self, index: u32) -> Result<ScoreMap> {
        match self {
            ScoreStore::InMemory(v) => v
                .get(index as usize - 1)
                .cloned()
                .ok_or(Error::MissingScore(index)),
            ScoreStore::OnDisk { dir, .. } => read_scores(dir, index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method_id: String,
    pub scores: ScoreStore,
    pub latency: LatencyProfile,
    pub exit_status: Option<String>,
    pub log_path: Option<PathBuf>,
}

/// A failed run with everything collected before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: MethodRun,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} frames completed)",
            self.error,
            self.partial.scores.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub method_id: String,
    pub timeout: Duration,
    /// Root under which `scores/<id>/`, `timing/<id>.csv` and `logs/<id>.log`
    /// are written. Scores stay in memory when unset.
    pub out_root: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(method_id: impl Into<String>) -> Self {
        Self {
            method_id: method_id.into(),
            timeout: DEFAULT_TIMEOUT,
            out_root: None,
        }
    }

    pub fn scores_dir(&self) -> Option<PathBuf> {
        self.out_root
            .as_ref()
            .map(|r| r.join("scores").join(&self.method_id))
    }

    pub fn timing_path(&self) -> Option<PathBuf> {
        self.out_root
            .as_ref()
            .map(|r| r.join("timing").join(format!("{}.csv", self.method_id)))
    }
}

type Response = Result<(u32, ScoreMap, Instant)>;

fn read_responses(stdout: ChildStdout, tx: mpsc::Sender<Response>) {
    let mut reader = BufReader::new(stdout);
    loop {
        let mut idx = [0u8; 4];
        match reader.read_exact(&mut idx) {
            Ok(()) => {}
            // end of stream: dropping tx tells the caller
            Err(_) => return,
        }
        let index = u32::from_le_bytes(idx);
        let msg = decode_raster::<ScoreMap, _>(&mut reader)
            .map(|s| (index, s, Instant::now()))
            .map_err(|e| Error::ProtocolDesync {
                frame: index,
                reason: e.to_string(),
            });
        let failed = msg.is_err();
        if tx.send(msg).is_err() || failed {
            return;
        }
    }
}

struct Session {
    child: Child,
    rx: Receiver<Response>,
    reader: Option<thread::JoinHandle<()>>,
}

impl Session {
    fn status_after(&mut self, grace: Duration) -> String {
        let deadline = Instant::now() + grace;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return status.to_string(),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = self.child.kill();
                    return self
                        .child
                        .wait()
                        .map(|s| s.to_string())
                        .unwrap_or_else(|e| e.to_string());
                }
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

/// Runs `method_cmd` once over every frame of the sequence at `sequence_dir`.
pub fn run_batch(
    method_cmd: &[String],
    sequence_dir: &Path,
    opts: &RunOptions,
) -> std::result::Result<MethodRun, Box<RunFailure>> {
    let reader = open_sequence(sequence_dir).map_err(|e| fail(e, opts, Vec::new(), Vec::new(), 0.0))?;
    let manifest = reader.manifest().clone();
    let reader = reader.without_geometry();
    let fps = manifest.fps;

    let scores_dir = opts.scores_dir();
    let log_path = opts
        .out_root
        .as_ref()
        .map(|r| r.join("logs").join(format!("{}.log", opts.method_id)));
    let setup = || -> Result<Stdio> {
        for dir in [scores_dir.clone(), opts.timing_path().and_then(|p| p.parent().map(Path::to_path_buf))]
            .into_iter()
            .flatten()
        {
            fs::create_dir_all(dir)?;
        }
        Ok(match &log_path {
            Some(p) => {
                fs::create_dir_all(p.parent().expect("log path has a parent"))?;
                Stdio::from(File::create(p)?)
            }
            None => Stdio::null(),
        })
    };
    let stderr = setup().map_err(|e| fail(e, opts, Vec::new(), Vec::new(), fps))?;

    let (program, args) = method_cmd
        .split_first()
        .ok_or_else(|| fail(Error::Manifest("empty method command".into()), opts, Vec::new(), Vec::new(), fps))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(stderr)
        .spawn()
        .map_err(|e| fail(e.into(), opts, Vec::new(), Vec::new(), fps))?;
    let stdout = child.stdout.take().expect("stdout is piped");
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let (tx, rx) = mpsc::channel();
    let handle = thread::spawn(move || read_responses(stdout, tx));
    let mut session = Session {
        child,
        rx,
        reader: Some(handle),
    };

    let mut scores = Vec::new();
    let mut latencies = Vec::new();
    let finish = |scores: Vec<ScoreMap>, latencies: Vec<f64>, status: Option<String>| -> MethodRun {
        let store = match &scores_dir {
            Some(dir) => ScoreStore::OnDisk {
                dir: dir.clone(),
                frames: latencies.len() as u32,
            },
            None => ScoreStore::InMemory(scores),
        };
        MethodRun {
            method_id: opts.method_id.clone(),
            scores: store,
            latency: LatencyProfile {
                mode: crate::streaming::LatencyMode::Measured {
                    per_frame_ms: latencies,
                },
                fps,
            },
            exit_status: status,
            log_path: log_path.clone(),
        }
    };

    for item in reader {
        let frame = match item {
            Ok(f) => f,
            Err(e) => return Err(Box::new(RunFailure { error: e, partial: finish(scores, latencies, None) })),
        };
        let index = frame.index;
        let mut request = index.to_le_bytes().to_vec();
        request.extend(encode_raster(&frame.mask));
        drop(frame);

        if stdin.write_all(&request).and_then(|_| stdin.flush()).is_err() {
            let status = session.status_after(opts.timeout);
            let completed = latencies.len();
            return Err(Box::new(RunFailure {
                error: Error::MethodCrashed { status: status.clone(), completed },
                partial: finish(scores, latencies, Some(status)),
            }));
        }
        let sent = Instant::now();

        let error = match session.rx.recv_timeout(opts.timeout) {
            Ok(Ok((got, map, done))) => {
                if got != index {
                    Some(Error::ProtocolDesync {
                        frame: index,
                        reason: format!("response carries frame index {got}"),
                    })
                } else if map.dims() != manifest.dims() {
                    Some(Error::ProtocolDesync {
                        frame: index,
                        reason: format!(
                            "score map is {}x{}, sequence is {}x{}",
                            map.width(),
                            map.height(),
                            manifest.width,
                            manifest.height
                        ),
                    })
                } else {
                    latencies.push(done.duration_since(sent).as_secs_f64() * 1000.0);
                    let stored = match &scores_dir {
                        Some(dir) => write_scores(dir, index, &map),
                        None => {
                            scores.push(map);
                            Ok(())
                        }
                    };
                    stored.err()
                }
            }
            Ok(Err(e)) => Some(e),
            Err(RecvTimeoutError::Timeout) => Some(Error::Timeout {
                frame: index,
                timeout_ms: opts.timeout.as_millis() as u64,
            }),
            Err(RecvTimeoutError::Disconnected) => {
                let status = session.status_after(opts.timeout);
                Some(Error::MethodCrashed {
                    status,
                    completed: latencies.len(),
                })
            }
        };
        if let Some(error) = error {
            let _ = session.child.kill();
            let status = session.status_after(Duration::ZERO);
            return Err(Box::new(RunFailure {
                error,
                partial: finish(scores, latencies, Some(status)),
            }));
        }
    }

    drop(stdin);
    let status = session.status_after(opts.timeout);
    if let Some(path) = opts.timing_path() {
        let rows: Vec<(u32, f64)> = latencies
            .iter()
            .enumerate()
            .map(|(i, &ms)| (i as u32 + 1, ms))
            .collect();
        let written = File::create(&path)
            .map_err(Error::from)
            .and_then(|f| write_timing_csv(&rows, f));
        if let Err(e) = written {
            return Err(Box::new(RunFailure {
                error: e,
                partial: finish(scores, latencies, Some(status)),
            }));
        }
    }
    Ok(finish(scores, latencies, Some(status)))
}

fn fail(error: Error, opts: &RunOptions, scores: Vec<ScoreMap>, latencies: Vec<f64>, fps: f64) -> Box<RunFailure> {
    Box::new(RunFailure {
        error,
        partial: MethodRun {
            method_id: opts.method_id.clone(),
            scores: ScoreStore::InMemory(scores),
            latency: LatencyProfile {
                mode: crate::streaming::LatencyMode::Measured {
                    per_frame_ms: latencies,
                },
                fps,
            },
            exit_status: None,
            log_path: None,
        },
    })
}

/// Scores and timings produced outside the harness.
pub fn load_precomputed(
    method_id: &str,
    scores_dir: &Path,
    timing_csv: &Path,
    frames: u32,
    fps: f64,
) -> Result<MethodRun> {
    for index in 1..=frames {
        if !crate::io::score_path(scores_dir, index).is_file() {
            return Err(Error::MissingScore(index));
        }
    }
    let timing = read_timing_csv(timing_csv)?;
    let per_frame_ms = (1..=frames)
        .map(|i| timing.get(&i).copied().ok_or(Error::MissingTiming(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodRun {
        method_id: method_id.to_string(),
        scores: ScoreStore::OnDisk {
            dir: scores_dir.to_path_buf(),
            frames,
        },
        latency: LatencyProfile::measured(per_frame_ms, fps)?,
        exit_status: None,
        log_path: None,
    })
}
