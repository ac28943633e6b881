use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use walkdir::WalkDir;

use super::RunnerError;

fn build_set(patterns: &[String]) -> Result<GlobSet, RunnerError> {
    let mut builder = GlobSetBuilder::new();
    for p in patterns {
        let glob = Glob::new(p).map_err(|e| RunnerError::io(format!("glob `{p}`"), std::io::Error::other(e)))?;
        builder.add(glob);
    }
    builder
        .build()
        .map_err(|e| RunnerError::io("glob set", std::io::Error::other(e)))
}

/// Lists test files under `root` whose root-relative path matches an include
/// glob and no exclude glob, in lexicographic order of that relative path.
/// No include globs means every file.
pub fn discover_tests(root: &Path, include: &[String], exclude: &[String]) -> Result<Vec<PathBuf>, RunnerError> {
    if !root.is_dir() {
        return Err(RunnerError::io(
            format!("test root {}", root.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let include_all = include.is_empty();
    let include = build_set(include)?;
    let exclude = build_set(exclude)?;

    let mut found = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| RunnerError::io(format!("walking {}", root.display()), e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        let rel_str = rel.to_string_lossy().replace('\\', "/");
        if (include_all || include.is_match(&rel_str)) && !exclude.is_match(&rel_str) {
            found.push((rel_str, entry.path().to_path_buf()));
        }
    }
    found.sort();
    if found.is_empty() {
        log::warn!("no test files matched under {}", root.display());
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::fs;

    fn corpus() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=10 {
            fs::write(dir.path().join(format!("{i:02}_case_test.js")), "").unwrap();
        }
        fs::write(dir.path().join("helper.js"), "").unwrap();
        fs::create_dir(dir.path().join("lib")).unwrap();
        fs::write(dir.path().join("lib/util.js"), "").unwrap();
        dir
    }

    fn names(paths: &[PathBuf]) -> Vec<String> {
        paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
    }

    #[test]
    fn include_sorted() {
        let dir = corpus();
        let found = discover_tests(dir.path(), &["*_test.*".into()], &[]).unwrap();
        assert_eq!(found.len(), 10);
        let mut sorted = names(&found);
        sorted.sort();
        assert_eq!(names(&found), sorted);
    }

    #[test]
    fn excludes_win() {
        let dir = corpus();
        let found = discover_tests(
            dir.path(),
            &["*_test.*".into()],
            &["0[1-3]_*".into()],
        )
        .unwrap();
        assert_eq!(found.len(), 7);
    }

    #[test]
    fn overlapping_includes_do_not_duplicate() {
        let dir = corpus();
        let a = vec!["*_test.js".to_string()];
        let b = vec!["0*".to_string()];
        let both = vec![a[0].clone(), b[0].clone()];
        let union: BTreeSet<PathBuf> = discover_tests(dir.path(), &a, &[])
            .unwrap()
            .into_iter()
            .chain(discover_tests(dir.path(), &b, &[]).unwrap())
            .collect();
        let found = discover_tests(dir.path(), &both, &[]).unwrap();
        assert_eq!(found.len(), union.len());
        assert_eq!(found.iter().cloned().collect::<BTreeSet<_>>(), union);
    }

    #[test]
    fn empty_match_is_not_an_error() {
        let dir = corpus();
        assert!(discover_tests(dir.path(), &["*.py".into()], &[]).unwrap().is_empty());
    }

    #[test]
    fn missing_root_is_an_error() {
        assert!(discover_tests(Path::new("/nonexistent/x"), &[], &[]).is_err());
    }
}
