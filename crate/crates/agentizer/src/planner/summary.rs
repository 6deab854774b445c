//! Compact repository description sent with every planner request.

use std::path::Path;

use crate::workspace::IGNORED_DIRS;

pub const DEFAULT_CAP: usize = 6 * 1024;

/// README head followed by a file tree, cut to `cap` bytes.
pub fn repo_summary(root: &Path, cap: usize) -> String {
    let mut out = String::new();
    let readme = ["README.md", "README", "README.rst", "README.txt"]
        .iter()
        .find_map(|n| std::fs::read_to_string(root.join(n)).ok());
    if let Some(text) = readme {
        out.push_str("# README (head)\n");
        for line in text.lines().take(60) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str("# Files\n");
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .max_depth(4)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !IGNORED_DIRS.contains(&e.file_name().to_string_lossy().as_ref()));
    for entry in walker.flatten().skip(1) {
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        let suffix = if entry.file_type().is_dir() { "/" } else { "" };
        out.push_str(&format!("{}{}\n", rel.display(), suffix));
        if out.len() > cap {
            break;
        }
    }
    truncate(out, cap)
}

fn truncate(mut s: String, cap: usize) -> String {
    if s.len() <= cap {
        return s;
    }
    let mut cut = cap;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    s.truncate(cut);
    s
}
