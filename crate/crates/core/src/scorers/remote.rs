//! Client for a scoring server speaking the [`wire`](super::wire) protocol
//! over TCP or a child process's stdio.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::num::NonZeroUsize;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use lru::LruCache;

use super::wire::{BatchItem, Request, Response};
use crate::dist::ScoreVector;
use crate::error::{Error, Result};
use crate::scorer::{check_position, Scorer};
use crate::seq::{SeqState, TokenId, Vocabulary};

/// Where the scoring server lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port` or bare `host:port`.
    Tcp(String),
    /// `stdio:program arg1 arg2 ...`, spawned as a child process.
    Stdio(Vec<String>),
}

impl Endpoint {
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(cmd) = spec.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(Error::input("stdio endpoint needs a command"));
            }
            Ok(Endpoint::Stdio(argv))
        } else {
            let addr = spec.strip_prefix("tcp://").unwrap_or(spec);
            if !addr.contains(':') {
                return Err(Error::input(format!("endpoint {spec:?} is not host:port")));
            }
            Ok(Endpoint::Tcp(addr.to_owned()))
        }
    }
}

#[derive(Clone, Debug)]
pub struct RemoteOptions {
    pub timeout: Duration,
    /// Extra attempts after a timed-out request.
    pub retries: u32,
    /// Cache capacity in entries; `None` picks a default sized to the vocabulary.
    pub cache_capacity: Option<usize>,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            retries: 2,
            cache_capacity: None,
        }
    }
}

/// Default cache size: 2^20 entries, reduced so the cache stays under 1 GiB.
pub fn default_cache_capacity(vocab_size: usize) -> usize {
    let budget = (1usize << 30) / (8 * vocab_size.max(1));
    budget.clamp(1, 1 << 20)
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Transport(format!("connect {addr}: {e}")))?;
                stream.set_nodelay(true).ok();
                let read_half = stream
                    .try_clone()
                    .map_err(|e| Error::Transport(e.to_string()))?;
                Ok(Self {
                    writer: Box::new(stream),
                    lines: spawn_reader(read_half),
                    child: None,
                })
            }
            Endpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Transport(format!("spawn {:?}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                })
            }
        }
    }

    fn send(&mut self, request: &Request) -> Result<()> {
        let mut line = serde_json::to_vec(request).map_err(|e| Error::Protocol(e.to_string()))?;
        line.push(b'\n');
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(format!("send: {e}")))
    }

    /// Waits for the response to `id`, discarding stale responses to earlier
    /// (timed-out) requests. Responses without an id are accepted as-is.
    fn receive(&mut self, id: u64, deadline: Instant) -> Result<Option<Response>> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(Error::Transport(format!("receive: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport("server closed the connection".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| Error::Protocol(format!("unparseable response {line:?}: {e}")))?;
            match resp.id {
                Some(got) if got != id => continue,
                _ => return Ok(Some(resp)),
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: std::io::Read + Send + 'static>(source: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let reader = BufReader::new(source);
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

type CacheKey = (usize, Vec<TokenId>);

/// Scorer backed by a remote model server.
///
/// Requests over one connection are serialized; responses are matched by
/// id. Results are cached by the exact masked context, so the cache can
/// never change what a query returns.
pub struct RemoteScorer {
    endpoint: Endpoint,
    conn: Mutex<Connection>,
    next_id: AtomicU64,
    vocab: Vocabulary,
    mask_id: TokenId,
    frozen_suggestion: Vec<TokenId>,
    options: RemoteOptions,
    cache: Mutex<LruCache<CacheKey, Arc<[f64]>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl RemoteScorer {
    /// Connects and performs the `meta` handshake.
    pub fn connect(endpoint: Endpoint, options: RemoteOptions) -> Result<Self> {
        let mut conn = Connection::open(&endpoint)?;
        conn.send(&Request::Meta { id: Some(0) })?;
        let meta = conn
            .receive(0, Instant::now() + options.timeout)?
            .ok_or_else(|| Error::Transport("timed out waiting for meta".into()))?;
        if let Some(e) = meta.error {
            return Err(Error::Scoring(e));
        }
        let vocab_size = meta
            .vocab_size
            .ok_or_else(|| Error::Protocol("meta response lacks vocab_size".into()))?;
        let mask_id = meta
            .mask_id
            .ok_or_else(|| Error::Protocol("meta response lacks mask_id".into()))?;
        let vocab = Vocabulary::new((0..vocab_size).map(|i| format!("[{i}]")).collect())?;
        let capacity = options
            .cache_capacity
            .unwrap_or_else(|| default_cache_capacity(vocab_size))
            .max(1);
        Ok(Self {
            endpoint,
            conn: Mutex::new(conn),
            next_id: AtomicU64::new(1),
            vocab,
            mask_id,
            frozen_suggestion: meta.frozen_suggestion.unwrap_or_default(),
            options,
            cache: Mutex::new(LruCache::new(NonZeroUsize::new(capacity).unwrap())),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Token ids the server suggests freezing (delimiters).
    pub fn frozen_suggestion(&self) -> &[TokenId] {
        &self.frozen_suggestion
    }

    /// `(hits, misses)` of the score cache.
    pub fn cache_stats(&self) -> (u64, u64) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }

    fn masked(&self, state: &SeqState, pos: usize) -> Result<CacheKey> {
        check_position(state, pos, None)?;
        if state.is_frozen(pos) {
            return Err(Error::input(format!("position {pos} is frozen")));
        }
        let mut tokens = state.ids().to_vec();
        tokens[pos] = self.mask_id;
        Ok((pos, tokens))
    }

    fn cached(&self, key: &CacheKey) -> Option<Arc<[f64]>> {
        let hit = self.cache.lock().unwrap().get(key).cloned();
        match &hit {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        hit
    }

    fn check_scores(&self, scores: Vec<f64>) -> Result<ScoreVector> {
        if scores.len() != self.vocab.size() {
            return Err(Error::Protocol(format!(
                "got {} scores, vocabulary has {}",
                scores.len(),
                self.vocab.size()
            )));
        }
        ScoreVector::new(scores).map_err(|e| Error::Protocol(e.to_string()))
    }

    /// Sends a request (built for a fresh id) and waits, retrying on timeout.
    fn round_trip(&self, build: impl Fn(u64) -> Request) -> Result<Response> {
        let mut conn = self.conn.lock().unwrap();
        for _attempt in 0..=self.options.retries {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            conn.send(&build(id))?;
            if let Some(resp) = conn.receive(id, Instant::now() + self.options.timeout)? {
                if let Some(e) = resp.error {
                    return Err(Error::Scoring(e));
                }
                return Ok(resp);
            }
        }
        Err(Error::Transport(format!(
            "no response after {} attempts of {:?}",
            self.options.retries + 1,
            self.options.timeout
        )))
    }
}

impl Scorer for RemoteScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn local_scores(&self, state: &SeqState, pos: usize) -> Result<ScoreVector> {
        let key = self.masked(state, pos)?;
        if let Some(s) = self.cached(&key) {
            return Ok(ScoreVector::from_finite(s.to_vec()));
        }
        let resp = self.round_trip(|id| Request::Scores {
            id,
            tokens: key.1.clone(),
            pos,
        })?;
        let scores = self.check_scores(
            resp.scores
                .ok_or_else(|| Error::Protocol("response lacks scores".into()))?,
        )?;
        self.cache.lock().unwrap().put(key, Arc::from(&scores[..]));
        Ok(scores)
    }

    fn local_scores_batch(&self, queries: &[(&SeqState, usize)]) -> Result<Vec<ScoreVector>> {
        let keys = queries
            .iter()
            .map(|&(s, p)| self.masked(s, p))
            .collect::<Result<Vec<_>>>()?;
        let mut out: Vec<Option<ScoreVector>> = keys
            .iter()
            .map(|k| self.cached(k).map(|s| ScoreVector::from_finite(s.to_vec())))
            .collect();
        let missing: Vec<usize> = (0..keys.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let items: Vec<BatchItem> = missing
                .iter()
                .map(|&i| BatchItem {
                    tokens: keys[i].1.clone(),
                    pos: keys[i].0,
                })
                .collect();
            let resp = self.round_trip(|id| Request::ScoresBatch {
                id: Some(id),
                items: items.clone(),
            })?;
            let results = resp
                .results
                .ok_or_else(|| Error::Protocol("batch response lacks results".into()))?;
            if results.len() != missing.len() {
                return Err(Error::Protocol(format!(
                    "batch of {} returned {} results",
                    missing.len(),
                    results.len()
                )));
            }
            let mut cache = self.cache.lock().unwrap();
            for (&i, scores) in missing.iter().zip(results) {
                let scores = self.check_scores(scores)?;
                cache.put(keys[i].clone(), Arc::from(&scores[..]));
                out[i] = Some(scores);
            }
        }
        Ok(out.into_iter().map(|s| s.expect("filled")).collect())
    }

    fn mask_id(&self) -> Option<TokenId> {
        Some(self.mask_id)
    }

    fn name(&self) -> String {
        match &self.endpoint {
            Endpoint::Tcp(a) => format!("remote(tcp://{a})"),
            Endpoint::Stdio(argv) => format!("remote(stdio:{})", argv.join(" ")),
        }
    }
}
