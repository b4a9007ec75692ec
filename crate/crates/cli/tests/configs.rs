use std::path::{Path, PathBuf};

use csiloc_cli::config::{schema, ExperimentConfig};

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn published_schema_is_current() {
    let path = crate_dir().join("schema/experiment-config.schema.json");
    let mut want = serde_json::to_string_pretty(&schema()).unwrap();
    want.push('\n');
    if std::env::var_os("CSILOC_UPDATE_SCHEMA").is_some() {
        std::fs::write(&path, &want).unwrap();
    }
    let have = std::fs::read_to_string(&path).unwrap_or_default();
    assert!(
        have == want,
        "{} is stale; rerun with CSILOC_UPDATE_SCHEMA=1",
        path.display()
    );
}

#[test]
fn schema_rejects_unknown_keys_at_the_top_level() {
    let s = schema();
    assert_eq!(s["additionalProperties"], serde_json::json!(false));
    let required: Vec<&str> = s["required"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for key in ["scenario", "seed", "room", "trajectory", "sessions"] {
        assert!(required.contains(&key), "{key} not required");
    }
}

#[test]
fn shipped_scenarios_load() {
    let dir = crate_dir().join("configs");
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        names.push((file_stem(&path), cfg));
    }
    names.sort_by(|a, b| a.0.cmp(&b.0));
    let stems: Vec<&str> = names.iter().map(|n| n.0.as_str()).collect();
    assert_eq!(
        stems,
        ["hall", "office1", "office1-reduced", "office2", "office2-reduced"]
    );
    for (stem, cfg) in &names {
        assert!(
            stem.starts_with(&cfg.scenario),
            "{stem} declares scenario {}",
            cfg.scenario
        );
    }
    let office1 = &names[1].1;
    assert_eq!((office1.room.width, office1.room.depth), (6.5, 2.5));
    assert_eq!(office1.sessions.count, 5);
    assert_eq!(office1.sessions.duration_s, 120.0);
    let office2 = &names[3].1;
    assert_ne!(office1.room.ap_positions, office2.room.ap_positions);
    assert!(office2.room.obstacle_extra_loss_db > office1.room.obstacle_extra_loss_db);
}

fn file_stem(p: &Path) -> String {
    p.file_stem().unwrap().to_string_lossy().into_owned()
}
