use super::*;
use std::io::{Read, Write as IoWrite};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

fn sample_request() -> CutoutRequest {
    CutoutRequest {
        survey: "X/Y".into(),
        ra_deg: 10.0,
        dec_deg: -5.0,
        fov_deg: 0.5,
        width_px: 64,
        height_px: 64,
        format: "jpg".into(),
    }
}

#[test]
fn url_has_fixed_key_order_and_encoding() {
    let url = build_request_url("http://example/api", &sample_request()).unwrap();
    assert_eq!(
        url,
        "http://example/api?hips=X%2FY&ra=10&dec=-5&fov=0.5&width=64&height=64&format=jpg"
    );
}

#[test]
fn url_always_percent_encodes_slashes() {
    let mut req = sample_request();
    req.survey = "CDS/P/DSS2/blue".into();
    let url = build_request_url("http://base", &req).unwrap();
    assert!(url.contains("hips=CDS%2FP%2FDSS2%2Fblue"));
    assert!(!url["http://base?".len()..].contains('/'));
}

#[test]
fn url_is_deterministic() {
    let a = build_request_url("http://b", &sample_request()).unwrap();
    let b = build_request_url("http://b", &sample_request()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn url_rejects_invalid_coordinates() {
    let mut req = sample_request();
    req.ra_deg = 400.0;
    assert!(matches!(
        build_request_url("http://b", &req),
        Err(SurveyError::InvalidRequest(_))
    ));
    let mut req = sample_request();
    req.dec_deg = -91.0;
    assert!(build_request_url("http://b", &req).is_err());
    let mut req = sample_request();
    req.width_px = 8;
    assert!(build_request_url("http://b", &req).is_err());
}

/// Counts connections; never responds usefully. Offline fetches must not
/// touch it at all.
fn canary_server() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            counter.fetch_add(1, Ordering::SeqCst);
            drop(stream);
        }
    });
    (format!("http://127.0.0.1:{port}"), hits)
}

/// Serves one PGM payload over bare HTTP/1.1 and counts requests.
fn pgm_server(payload: Vec<u8>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            counter.fetch_add(1, Ordering::SeqCst);
            let mut stream = stream;
            // Drain the request head.
            let mut buf = [0u8; 4096];
            let mut head = Vec::new();
            loop {
                match stream.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => {
                        head.extend_from_slice(&buf[..n]);
                        if head.windows(4).any(|w| w == b"\r\n\r\n") {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
            let header = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: image/x-portable-graymap\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                payload.len()
            );
            let _ = stream.write_all(header.as_bytes());
            let _ = stream.write_all(&payload);
        }
    });
    (format!("http://127.0.0.1:{port}"), hits)
}

fn tiny_pgm_bytes() -> Vec<u8> {
    let mut bytes = b"P5\n16 16\n255\n".to_vec();
    bytes.extend((0..256).map(|i| (i % 256) as u8));
    bytes
}

#[test]
fn offline_with_fixture_returns_it_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = canary_server();
    let client = Client::new(&url, FetchMode::Offline, dir.path());
    let req = sample_request();

    // Plant the fixture at the content address of this request.
    let fixture = cache_path(dir.path(), &url, &req).unwrap();
    std::fs::create_dir_all(dir.path()).unwrap();
    let img = Image::new(1, 4, 4, (0..16).map(|i| i as f64 / 15.0).collect(), Domain::Unit)
        .unwrap();
    netpbm::write(&fixture, &img).unwrap();
    let expected = netpbm::read(&fixture).unwrap();

    let outcome = client.fetch_cutout(&req).unwrap();
    assert_eq!(outcome.image, expected);
    assert!(outcome.provenance.from_cache);
    assert_eq!(hits.load(Ordering::SeqCst), 0, "offline mode used the network");
}

#[test]
fn offline_without_fixture_errors_without_network() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = canary_server();
    let client = Client::new(&url, FetchMode::Offline, dir.path());
    match client.fetch_cutout(&sample_request()) {
        Err(SurveyError::MissingFixture { path }) => {
            assert!(path.starts_with(dir.path()));
        }
        other => panic!("expected missing fixture, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 0);
}

#[test]
fn live_fetch_caches_and_second_call_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = pgm_server(tiny_pgm_bytes());
    let client = Client::new(&url, FetchMode::Live, dir.path())
        .with_network_options(Duration::from_secs(5), Duration::from_millis(10));
    let req = sample_request();

    let first = client.fetch_cutout(&req).unwrap();
    assert!(!first.provenance.from_cache);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    assert_eq!((first.image.height(), first.image.width()), (16, 16));

    let second = client.fetch_cutout(&req).unwrap();
    assert!(second.provenance.from_cache);
    assert_eq!(
        hits.load(Ordering::SeqCst),
        1,
        "cache hit must not re-fetch"
    );
    assert_eq!(first.image, second.image);

    // Provenance log shows exactly one miss then one hit.
    let log = std::fs::read_to_string(dir.path().join("provenance.log")).unwrap();
    let kinds: Vec<&str> = log
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(kinds, vec!["miss", "hit"]);
}

#[test]
fn live_fetch_reports_network_failure_after_retries() {
    let dir = tempfile::tempdir().unwrap();
    // Nothing is listening on the canary after we drop it immediately.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let client = Client::new(
        format!("http://127.0.0.1:{port}"),
        FetchMode::Live,
        dir.path(),
    )
    .with_network_options(Duration::from_millis(300), Duration::from_millis(5));
    assert!(matches!(
        client.fetch_cutout(&sample_request()),
        Err(SurveyError::Network { .. })
    ));
}

fn object_entry() -> ObjectEntry {
    ObjectEntry {
        name: "aldebaran".into(),
        ra_deg: 68.98,
        dec_deg: 16.509,
        paired: true,
    }
}

fn plant_fixture(dir: &Path, base: &str, survey: &str, entry: &ObjectEntry) {
    let req = CutoutRequest {
        survey: survey.into(),
        ra_deg: entry.ra_deg,
        dec_deg: entry.dec_deg,
        fov_deg: 0.5,
        width_px: 32,
        height_px: 32,
        format: "jpg".into(),
    };
    let path = cache_path(dir, base, &req).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    let img = Image::zeros(1, 32, 32, Domain::Unit);
    netpbm::write(&path, &img).unwrap();
}

#[test]
fn object_references_tolerate_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let (url, hits) = canary_server();
    let client = Client::new(&url, FetchMode::Offline, &cache);
    let entry = object_entry();
    let surveys: Vec<String> = (0..10).map(|i| format!("S/{i}")).collect();
    // 9 of 10 fixtures present.
    for survey in surveys.iter().take(9) {
        plant_fixture(&cache, &url, survey, &entry);
    }
    let gt_dir = dir.path().join("data/aldebaran/gt");
    let (written, failures) = client
        .fetch_object_references(&entry, &surveys, 0.5, 32, &gt_dir)
        .unwrap();
    assert_eq!(written.len(), 9);
    assert_eq!(failures.len(), 1);
    assert!(matches!(failures[0].1, SurveyError::MissingFixture { .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
    assert!(gt_dir.join("0000.ppm").exists());
}

#[test]
fn object_references_error_when_everything_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (url, _) = canary_server();
    let client = Client::new(&url, FetchMode::Offline, dir.path().join("cache"));
    let entry = object_entry();
    let surveys: Vec<String> = (0..3).map(|i| format!("S/{i}")).collect();
    match client.fetch_object_references(&entry, &surveys, 0.5, 32, &dir.path().join("gt")) {
        Err(SurveyError::AllSurveysFailed { object, failures }) => {
            assert_eq!(object, "aldebaran");
            assert_eq!(failures, 3);
        }
        other => panic!("expected aggregate failure, got {other:?}"),
    }
}

#[test]
fn unpaired_object_fetch_is_still_permitted() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let (url, _) = canary_server();
    let client = Client::new(&url, FetchMode::Offline, &cache);
    let entry = ObjectEntry {
        name: "jupiter".into(),
        ra_deg: 0.0,
        dec_deg: 0.0,
        paired: false,
    };
    let surveys = vec!["S/0".to_string()];
    plant_fixture(&cache, &url, "S/0", &entry);
    let (written, failures) = client
        .fetch_object_references(&entry, &surveys, 0.5, 32, &dir.path().join("gt"))
        .unwrap();
    assert_eq!(written.len(), 1);
    assert!(failures.is_empty());
}
