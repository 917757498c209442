//! Append-only JSONL event log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::ServiceError;
use crate::state::Event;

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (or creates) the log and returns its events. A final line
    /// that is incomplete or unparsable is a write torn by a crash: it is
    /// cut off and replay continues. A bad line anywhere else is an error.
    pub fn open(path: &Path) -> Result<(EventLog, Vec<Event>), ServiceError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(ServiceError::io(path.display(), e)),
        };
        let mut events = Vec::new();
        let mut good = 0usize;
        let mut offset = 0usize;
        while offset < bytes.len() {
            let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|i| offset + i);
            let line_end = end.unwrap_or(bytes.len());
            let line = &bytes[offset..line_end];
            let parsed = std::str::from_utf8(line)
                .ok()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<Event>);
            let is_last = end.is_none_or(|e| e + 1 == bytes.len());
            match parsed {
                Some(Ok(event)) if end.is_some() => {
                    events.push(event);
                    good = line_end + 1;
                }
                _ if is_last => {
                    tracing::warn!("dropping torn final line of {}", path.display());
                    break;
                }
                _ => {
                    return Err(ServiceError::Internal(format!(
                        "{}: corrupt event at byte {offset}",
                        path.display()
                    )))
                }
            }
            offset = line_end + 1;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::io(path.display(), e))?;
        if good < bytes.len() {
            file.set_len(good as u64).map_err(|e| ServiceError::io(path.display(), e))?;
        }
        Ok((
            EventLog {
                path: path.to_path_buf(),
                file,
            },
            events,
        ))
    }

    /// Writes one line and syncs it before returning.
    pub fn append(&mut self, event: &Event) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(event).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| ServiceError::io(self.path.display(), e))
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir.display(), e))?;
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| ServiceError::io(tmp.display(), e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| ServiceError::io(tmp.display(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| ServiceError::io(path.display(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(n: usize) -> Event {
        Event::AnswersAdded {
            session_id: format!("s{n}"),
            answers: Vec::new(),
        }
    }

    #[test]
    fn appended_events_replay_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let (mut log, events) = EventLog::open(&path).unwrap();
        assert!(events.is_empty());
        for n in 0..3 {
            log.append(&event(n)).unwrap();
        }
        drop(log);
        let (_, events) = EventLog::open(&path).unwrap();
        assert_eq!(events, (0..3).map(event).collect::<Vec<_>>());
    }

    #[test]
    fn torn_final_line_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut text = serde_json::to_string(&event(0)).unwrap() + "\n";
        let full = text.len();
        text.push_str(r#"{"event":"answers_ad"#);
        std::fs::write(&path, &text).unwrap();
        let (mut log, events) = EventLog::open(&path).unwrap();
        assert_eq!(events, vec![event(0)]);
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, full);
        log.append(&event(1)).unwrap();
        let (_, events) = EventLog::open(&path).unwrap();
        assert_eq!(events, vec![event(0), event(1)]);
    }

    #[test]
    fn complete_final_line_without_newline_is_treated_as_torn() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let line = serde_json::to_string(&event(0)).unwrap();
        std::fs::write(&path, format!("{line}\n{line}")).unwrap();
        let (_, events) = EventLog::open(&path).unwrap();
        assert_eq!(events.len(), 1);
    }

    #[test]
    fn corruption_before_the_end_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let line = serde_json::to_string(&event(0)).unwrap();
        std::fs::write(&path, format!("garbage\n{line}\n")).unwrap();
        assert!(EventLog::open(&path).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.bin");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert!(!path.with_extension("tmp").exists());
    }
}
