use std::path::Path;

use bilevel_core::orchestrator::{run_seed, RunConfig};
use bilevel_core::proposer::ProposerKind;

#[test]
fn shipped_configs_load_and_run() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let mut c = RunConfig::load(&path).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c, "{}", path.display());
        seen += 1;
        if c.proposer.kind == ProposerKind::RemoteLlm {
            continue;
        }
        c.max_iterations = 3;
        let r = run_seed(&c, c.seeds[0], &dir).unwrap();
        assert!(
            !r.rows.is_empty() && r.final_objective.is_finite(),
            "{}",
            path.display()
        );
    }
    assert!(seen >= 5);
}
