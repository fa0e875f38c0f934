//! Sky-survey cutout client.
//!
//! Speaks HTTP GET to a hips2fits-style cutout endpoint, decodes the
//! response into the dataset's image type, and content-addresses every
//! result in a local cache (`cache/<sha256-of-url>.ppm` plus a `.meta`
//! sidecar). Offline mode serves exclusively from cache/fixtures and never
//! touches the network. Every fetch appends one line to an append-only
//! provenance log, enough to re-issue the request.

use crate::dataset::{netpbm, DatasetError, Domain, Image, ObjectEntry};
use sha2::{Digest, Sha256};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// One cutout request. `survey` is a HiPS identifier like `CDS/P/DSS2/red`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoutRequest {
    pub survey: String,
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub fov_deg: f64,
    pub width_px: usize,
    pub height_px: usize,
    /// Service-side payload format tag (jpg or png).
    pub format: String,
}

impl CutoutRequest {
    pub fn validate(&self) -> Result<(), SurveyError> {
        if !(0.0..360.0).contains(&self.ra_deg) || !(-90.0..=90.0).contains(&self.dec_deg) {
            return Err(SurveyError::InvalidRequest(format!(
                "coordinates out of range: ra {}, dec {}",
                self.ra_deg, self.dec_deg
            )));
        }
        if self.fov_deg <= 0.0 {
            return Err(SurveyError::InvalidRequest("fov must be positive".into()));
        }
        if self.width_px < 16 || self.height_px < 16 {
            return Err(SurveyError::InvalidRequest(
                "cutout must be at least 16x16 pixels".into(),
            ));
        }
        if self.survey.is_empty() {
            return Err(SurveyError::InvalidRequest("empty survey identifier".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum SurveyError {
    InvalidRequest(String),
    /// Transport or HTTP failure after all retries.
    Network { url: String, message: String },
    MissingFixture { path: PathBuf },
    Undecodable { source: String, reason: String },
    AllSurveysFailed { object: String, failures: usize },
    Io { path: PathBuf, message: String },
}

impl fmt::Display for SurveyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurveyError::InvalidRequest(reason) => write!(f, "invalid cutout request: {reason}"),
            SurveyError::Network { url, message } => {
                write!(f, "network failure for {url}: {message}")
            }
            SurveyError::MissingFixture { path } => {
                write!(f, "offline mode: fixture missing at {}", path.display())
            }
            SurveyError::Undecodable { source, reason } => {
                write!(f, "undecodable payload from {source}: {reason}")
            }
            SurveyError::AllSurveysFailed { object, failures } => {
                write!(f, "all {failures} surveys failed for object {object}")
            }
            SurveyError::Io { path, message } => {
                write!(f, "io error at {}: {message}", path.display())
            }
        }
    }
}

impl std::error::Error for SurveyError {}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SurveyError + '_ {
    move |e| SurveyError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// RFC 3986 unreserved characters pass through; everything else becomes
/// uppercase percent escapes.
fn percent_encode(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for &b in value.as_bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Deterministic query string with keys in the fixed order
/// `hips, ra, dec, fov, width, height, format`.
pub fn build_request_url(base_url: &str, req: &CutoutRequest) -> Result<String, SurveyError> {
    req.validate()?;
    Ok(format!(
        "{}?hips={}&ra={}&dec={}&fov={}&width={}&height={}&format={}",
        base_url,
        percent_encode(&req.survey),
        req.ra_deg,
        req.dec_deg,
        req.fov_deg,
        req.width_px,
        req.height_px,
        percent_encode(&req.format),
    ))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Cache file for a request: `cache_dir/<sha256-of-url>.ppm`.
pub fn cache_path(
    cache_dir: &Path,
    base_url: &str,
    req: &CutoutRequest,
) -> Result<PathBuf, SurveyError> {
    let url = build_request_url(base_url, req)?;
    Ok(cache_dir.join(format!("{}.ppm", sha256_hex(url.as_bytes()))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchMode {
    Live,
    Offline,
}

/// Where a fetched image came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// Request URL (live) or fixture path (offline/cache hits record both).
    pub url: String,
    pub fixture: Option<PathBuf>,
    pub timestamp_unix: u64,
    pub content_sha256: String,
    pub from_cache: bool,
}

#[derive(Debug)]
pub struct FetchOutcome {
    pub image: Image,
    pub provenance: Provenance,
}

/// Cutout client with a content-addressed cache.
pub struct Client {
    pub base_url: String,
    pub mode: FetchMode,
    pub cache_dir: PathBuf,
    timeout: Duration,
    retries: u32,
    backoff_base: Duration,
}

impl Client {
    pub fn new(base_url: impl Into<String>, mode: FetchMode, cache_dir: impl Into<PathBuf>) -> Self {
        Client {
            base_url: base_url.into(),
            mode,
            cache_dir: cache_dir.into(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }

    /// Shorter timeouts/backoff, used by tests against local fake servers.
    pub fn with_network_options(mut self, timeout: Duration, backoff_base: Duration) -> Self {
        self.timeout = timeout;
        self.backoff_base = backoff_base;
        self
    }

    fn now_unix() -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }

    fn append_provenance(&self, p: &Provenance) -> Result<(), SurveyError> {
        let path = self.cache_dir.join("provenance.log");
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let kind = if p.fixture.is_some() && !p.from_cache {
            "fixture"
        } else if p.from_cache {
            "hit"
        } else {
            "miss"
        };
        writeln!(
            f,
            "{}\t{}\t{}\t{}",
            p.timestamp_unix, kind, p.content_sha256, p.url
        )
        .map_err(io_err(&path))
    }

    /// GET with timeout and up to `retries` retries under exponential
    /// backoff (base, 2x, 4x).
    fn http_get(&self, url: &str) -> Result<Vec<u8>, SurveyError> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build();
        let agent: ureq::Agent = config.into();
        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * (1 << (attempt - 1)));
            }
            match agent.get(url).call() {
                Ok(mut response) => {
                    if response.status().is_success() {
                        match response.body_mut().read_to_vec() {
                            Ok(bytes) => return Ok(bytes),
                            Err(e) => last_error = format!("body read: {e}"),
                        }
                    } else {
                        last_error = format!("http status {}", response.status());
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(SurveyError::Network {
            url: url.to_string(),
            message: last_error,
        })
    }

    fn decode_payload(&self, bytes: &[u8], source: &str) -> Result<Image, SurveyError> {
        if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
            return netpbm::read_bytes(bytes, Path::new(source)).map_err(|e| {
                SurveyError::Undecodable {
                    source: source.to_string(),
                    reason: e.to_string(),
                }
            });
        }
        let decoded = image::load_from_memory(bytes).map_err(|e| SurveyError::Undecodable {
            source: source.to_string(),
            reason: e.to_string(),
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] = px.0[c] as f64 / 255.0;
            }
        }
        Image::new(3, h, w, data, Domain::Unit).map_err(|e: DatasetError| {
            SurveyError::Undecodable {
                source: source.to_string(),
                reason: e.to_string(),
            }
        })
    }

    /// Fetch one cutout. Cache hits (and offline fixtures) never touch the
    /// network; live misses GET, decode, and populate the cache.
    pub fn fetch_cutout(&self, req: &CutoutRequest) -> Result<FetchOutcome, SurveyError> {
        let url = build_request_url(&self.base_url, req)?;
        std::fs::create_dir_all(&self.cache_dir).map_err(io_err(&self.cache_dir))?;
        let cached = self.cache_dir.join(format!("{}.ppm", sha256_hex(url.as_bytes())));

        if cached.exists() {
            let image = netpbm::read(&cached).map_err(|e| SurveyError::Undecodable {
                source: cached.display().to_string(),
                reason: e.to_string(),
            })?;
            let content = std::fs::read(&cached).map_err(io_err(&cached))?;
            let provenance = Provenance {
                url,
                fixture: Some(cached),
                timestamp_unix: Self::now_unix(),
                content_sha256: sha256_hex(&content),
                from_cache: true,
            };
            self.append_provenance(&provenance)?;
            return Ok(FetchOutcome { image, provenance });
        }

        match self.mode {
            FetchMode::Offline => Err(SurveyError::MissingFixture { path: cached }),
            FetchMode::Live => {
                let bytes = self.http_get(&url)?;
                let image = self.decode_payload(&bytes, &url)?;
                netpbm::write(&cached, &image).map_err(|e| SurveyError::Io {
                    path: cached.clone(),
                    message: e.to_string(),
                })?;
                let content = std::fs::read(&cached).map_err(io_err(&cached))?;
                let content_sha256 = sha256_hex(&content);
                let meta = cached.with_extension("meta");
                std::fs::write(
                    &meta,
                    format!(
                        "url={url}\nfetched_at={}\nsha256={content_sha256}\n",
                        Self::now_unix()
                    ),
                )
                .map_err(io_err(&meta))?;
                let provenance = Provenance {
                    url,
                    fixture: None,
                    timestamp_unix: Self::now_unix(),
                    content_sha256,
                    from_cache: false,
                };
                self.append_provenance(&provenance)?;
                Ok(FetchOutcome { image, provenance })
            }
        }
    }

    /// Fetch one reference per survey identifier for an object, writing the
    /// successes into `gt_dir` as `NNNN.ppm`. Per-survey failures are
    /// reported alongside whatever succeeded; only a clean sweep of
    /// failures is an error.
    pub fn fetch_object_references(
        &self,
        entry: &ObjectEntry,
        surveys: &[String],
        fov_deg: f64,
        cutout_px: usize,
        gt_dir: &Path,
    ) -> Result<(Vec<PathBuf>, Vec<(String, SurveyError)>), SurveyError> {
        if surveys.is_empty() {
            return Err(SurveyError::InvalidRequest("empty survey catalog".into()));
        }
        std::fs::create_dir_all(gt_dir).map_err(io_err(gt_dir))?;
        let mut written = Vec::new();
        let mut failures = Vec::new();
        for (i, survey) in surveys.iter().enumerate() {
            let req = CutoutRequest {
                survey: survey.clone(),
                ra_deg: entry.ra_deg,
                dec_deg: entry.dec_deg,
                fov_deg,
                width_px: cutout_px,
                height_px: cutout_px,
                format: "jpg".into(),
            };
            match self.fetch_cutout(&req) {
                Ok(outcome) => {
                    let path = gt_dir.join(format!("{i:04}.ppm"));
                    netpbm::write(&path, &outcome.image).map_err(|e| SurveyError::Io {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                    written.push(path);
                }
                Err(e) => failures.push((survey.clone(), e)),
            }
        }
        if written.is_empty() {
            return Err(SurveyError::AllSurveysFailed {
                object: entry.name.clone(),
                failures: failures.len(),
            });
        }
        Ok((written, failures))
    }
}

#[cfg(test)]
mod tests;
