use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of `bytes`, truncated to 128 bits.
pub fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..16])
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Order-preserving parallel map. Sequential without the `native` feature.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "native")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "native"))]
    {
        items.iter().map(f).collect()
    }
}

static WORKDIR_SEQ: AtomicU64 = AtomicU64::new(0);

/// Create a fresh directory under `root` named after `label`. Uses
/// `create_dir` (not `create_dir_all`) for the leaf so two callers can never
/// be handed the same directory.
pub fn unique_workdir(root: &Path, label: &str) -> io::Result<PathBuf> {
    fs::create_dir_all(root)?;
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    loop {
        let seq = WORKDIR_SEQ.fetch_add(1, Ordering::Relaxed);
        let dir = root.join(format!("{safe}-{}-{seq}", std::process::id()));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}

/// A counting semaphore on std primitives.
#[derive(Debug)]
pub struct Semaphore {
    permits: std::sync::Mutex<usize>,
    cv: std::sync::Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: std::sync::Mutex::new(permits.max(1)),
            cv: std::sync::Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

/// Whether `program` is an executable file on `PATH`.
pub fn which(program: &str) -> bool {
    std::env::var_os("PATH").is_some_and(|paths| {
        std::env::split_paths(&paths).any(|dir| dir.join(program).is_file())
    })
}

/// Replace `{name}` placeholders in each argument of a command template.
pub fn expand_template(template: &[String], vars: &[(&str, &str)]) -> Vec<String> {
    template
        .iter()
        .map(|arg| {
            let mut out = arg.clone();
            for (k, v) in vars {
                out = out.replace(&format!("{{{k}}}"), v);
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ProcOutput {
    /// `None` when killed after the timeout.
    pub status: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
}

impl ProcOutput {
    pub fn success(&self) -> bool {
        self.status == Some(0)
    }

    pub fn combined(&self) -> String {
        let mut s = self.stdout.clone();
        if !self.stderr.is_empty() {
            if !s.is_empty() && !s.ends_with('\n') {
                s.push('\n');
            }
            s.push_str(&self.stderr);
        }
        s
    }
}

/// Run `argv` in `cwd`, capturing output, killing the child after `timeout`.
/// Spawn failures surface as `Err`; everything else is a `ProcOutput`.
#[cfg(feature = "native")]
pub fn run_with_timeout(
    argv: &[String],
    cwd: Option<&Path>,
    timeout: std::time::Duration,
) -> io::Result<ProcOutput> {
    use std::io::Read;
    use std::process::{Command, Stdio};
    use wait_timeout::ChildExt;

    let (program, args) = argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    let mut child = cmd.spawn()?;

    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let (status, timed_out) = match child.wait_timeout(timeout)? {
        Some(st) => (st.code(), false),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            (None, true)
        }
    };
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    Ok(ProcOutput {
        status,
        stdout,
        stderr,
        timed_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_id_is_stable() {
        assert_eq!(content_id(b"abc"), "ba7816bf8f01cfea414140de5dae2223");
    }

    #[test]
    fn template_expansion() {
        let t = vec!["lint".to_string(), "{file}".to_string(), "-o={dir}/x".to_string()];
        assert_eq!(
            expand_template(&t, &[("file", "a.v"), ("dir", "/w")]),
            ["lint", "a.v", "-o=/w/x"]
        );
    }

    #[test]
    fn workdirs_are_distinct() {
        let root = tempfile::tempdir().unwrap();
        let a = unique_workdir(root.path(), "p/1").unwrap();
        let b = unique_workdir(root.path(), "p/1").unwrap();
        assert_ne!(a, b);
        assert!(a.file_name().unwrap().to_str().unwrap().starts_with("p_1-"));
    }

    #[cfg(feature = "native")]
    #[test]
    fn process_timeout_kills() {
        let argv: Vec<String> = ["sh", "-c", "echo hi; sleep 5"].iter().map(|s| s.to_string()).collect();
        let out = run_with_timeout(&argv, None, std::time::Duration::from_millis(300)).unwrap();
        assert!(out.timed_out);
        assert_eq!(out.status, None);
        let ok: Vec<String> = ["sh", "-c", "echo hi; exit 3"].iter().map(|s| s.to_string()).collect();
        let out = run_with_timeout(&ok, None, std::time::Duration::from_secs(5)).unwrap();
        assert_eq!(out.status, Some(3));
        assert_eq!(out.stdout, "hi\n");
    }

    #[cfg(feature = "native")]
    #[test]
    fn missing_program_is_an_error() {
        let argv = vec!["definitely-not-a-real-binary-xyz".to_string()];
        let err = run_with_timeout(&argv, None, std::time::Duration::from_secs(1)).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::NotFound);
    }
}
