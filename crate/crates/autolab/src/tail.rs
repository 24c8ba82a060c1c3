//! Reading the end of a file without reading the whole file.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::Path;

const CHUNK: u64 = 8192;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tail {
    pub lines: Vec<String>,
    /// Bytes actually read from the file.
    pub bytes_read: u64,
}

/// Last `n` lines of `path`, reading backwards in chunks and never more
/// than `max_bytes`. A missing file yields an empty tail. Invalid UTF-8 is
/// replaced. A trailing newline does not produce an empty last line.
pub fn tail_file(path: &Path, n: usize, max_bytes: u64) -> io::Result<Tail> {
    let mut f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Tail::default()),
        Err(e) => return Err(e),
    };
    let len = f.metadata()?.len();
    if n == 0 || len == 0 {
        return Ok(Tail::default());
    }
    let mut buf: Vec<u8> = Vec::new();
    let mut pos = len;
    let floor = len.saturating_sub(max_bytes);
    loop {
        let body = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let newlines = body.iter().filter(|b| **b == b'\n').count();
        if newlines >= n || pos == floor {
            break;
        }
        let step = CHUNK.min(pos - floor);
        pos -= step;
        f.seek(SeekFrom::Start(pos))?;
        let mut chunk = vec![0u8; step as usize];
        f.read_exact(&mut chunk)?;
        chunk.extend_from_slice(&buf);
        buf = chunk;
    }
    let bytes_read = buf.len() as u64;
    let text = String::from_utf8_lossy(&buf);
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    // unless we reached the start of the file, the first piece is partial
    if pos > 0 && !lines.is_empty() {
        lines.remove(0);
    }
    let skip = lines.len().saturating_sub(n);
    Ok(Tail {
        lines: lines[skip..].iter().map(|l| l.trim_end_matches('\r').to_string()).collect(),
        bytes_read,
    })
}
