//! `file-download`: resumable HTTP download with optional SHA-256 check.

use std::fs::{self, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use agentizer_core::ContextKind;
use sha2::{Digest, Sha256};

use super::ArgType as A;
use super::{artifact_kind_for, str_arg, Args, Tool, ToolContext, ToolErrorKind, ToolResult, ToolSpec};

pub struct FileDownload;

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

enum Fetch {
    Done,
    Retry(String),
    Fatal(String),
}

fn fetch(url: &str, part: &Path) -> Fetch {
    let have = fs::metadata(part).map(|m| m.len()).unwrap_or(0);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let mut req = agent.get(url);
    if have > 0 {
        req = req.header("Range", &format!("bytes={have}-"));
    }
    let resp = match req.call() {
        Ok(r) => r,
        Err(e) => return Fetch::Retry(format!("{url}: {e}")),
    };
    let status = resp.status().as_u16();
    let append = match status {
        206 if have > 0 => true,
        200 => false,
        416 if have > 0 => {
            // Server has nothing past our offset: start over.
            let _ = fs::remove_file(part);
            return Fetch::Retry(format!("{url}: range not satisfiable, restarting"));
        }
        s if (500..600).contains(&s) || s == 429 => return Fetch::Retry(format!("{url}: HTTP {s}")),
        s => return Fetch::Fatal(format!("{url}: HTTP {s}")),
    };
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(part);
    let mut file = match file {
        Ok(f) => f,
        Err(e) => return Fetch::Fatal(format!("{}: {e}", part.display())),
    };
    let mut body = resp.into_body().into_reader();
    let mut buf = [0u8; 64 * 1024];
    loop {
        match body.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                if let Err(e) = file.write_all(&buf[..n]) {
                    return Fetch::Fatal(format!("{}: {e}", part.display()));
                }
            }
            // Partial data stays in the .part file for the next attempt.
            Err(e) => return Fetch::Retry(format!("{url}: interrupted: {e}")),
        }
    }
    Fetch::Done
}

impl Tool for FileDownload {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("file-download", "Download a URL into the workspace, resuming partial files.", true)
            .arg("url", A::String, true)
            .arg("dest", A::Path, true)
            .arg("sha256", A::String, false)
    }

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult {
        if let Err(e) = cx.policy.require_network() {
            return e.into();
        }
        let url = str_arg(args, "url").unwrap_or_default();
        let dest = match cx.policy.resolve(str_arg(args, "dest").unwrap_or_default()) {
            Ok(p) => p,
            Err(e) => return e.into(),
        };
        let _guard = cx.locks.lock(&dest);
        if let Some(parent) = dest.parent() {
            if let Err(e) = fs::create_dir_all(parent) {
                return ToolResult::failure(ToolErrorKind::ExecutionFailed, format!("{}: {e}", parent.display()));
            }
        }
        let mut part = dest.clone().into_os_string();
        part.push(".part");
        let part = std::path::PathBuf::from(part);
        let mut last = String::new();
        let mut done = false;
        for _ in 0..3 {
            match fetch(url, &part) {
                Fetch::Done => {
                    done = true;
                    break;
                }
                Fetch::Retry(msg) => last = msg,
                Fetch::Fatal(msg) => return ToolResult::failure(ToolErrorKind::NetworkError, msg),
            }
        }
        if !done {
            let mut r = ToolResult::failure(ToolErrorKind::NetworkError, last);
            r.retryable = true;
            return r;
        }
        if let Some(want) = str_arg(args, "sha256") {
            let got = sha256_file(&part).unwrap_or_default();
            if !got.eq_ignore_ascii_case(want) {
                let _ = fs::remove_file(&part);
                let _ = fs::remove_file(&dest);
                return ToolResult::failure(
                    ToolErrorKind::ChecksumMismatch,
                    format!("{url}: sha256 {got} does not match expected {want}"),
                );
            }
        }
        if let Err(e) = fs::rename(&part, &dest) {
            return ToolResult::failure(ToolErrorKind::ExecutionFailed, format!("{}: {e}", dest.display()));
        }
        let rel = cx.ws.relative(&dest);
        let mut kind = artifact_kind_for(&rel);
        if kind == agentizer_core::ArtifactKind::File {
            kind = agentizer_core::ArtifactKind::Dataset;
        }
        ToolResult::success()
            .with_item(ContextKind::DocSlice, format!("downloaded {url} to {rel}"))
            .with_artifact(cx.ws, &dest, kind, &rel)
    }
}
