#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn ldlab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ldlab"));
    c.env("LDLAB_THREADS", "1");
    c
}

pub fn run(args: &[&str]) -> Output {
    ldlab().args(args).output().expect("spawn ldlab")
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "ldlab {} exited {:?}\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Overrides that shrink every stage to a few seconds at 16×16.
pub const TINY: &[&str] = &[
    "corpus.resolution=16",
    "corpus.styles=[1,2]",
    "diffusion.denoiser.latent_size=16",
    "diffusion.denoiser.condition_size=16",
    "diffusion.denoiser.base_width=8",
    "diffusion.denoiser.depth=2",
    "diffusion.denoiser.timestep_embedding_dim=16",
    "diffusion.raster.height=16",
    "diffusion.raster.width=16",
    "diffusion.schedule.timesteps=20",
    "stage1.steps=3",
    "stage2.steps=3",
    "one_step.steps=3",
    "generation.styles=[1,2]",
    "generation.per_style=2",
    "generation.sampler.ddim_steps=4",
    "detector.model.input_size=16",
    "detector.model.width=8",
    "detector.model.hourglass_depth=1",
    "detector.pretrain.steps=3",
    "detector.finetune.steps=3",
    "ablation.n_samples=3",
    "ablation.panel_rows=2",
    "ablation.sampler.ddim_steps=4",
];

/// Common flags for a tiny run, either from overrides or from a frozen config.
pub fn tiny_flags(frozen: Option<&Path>) -> Vec<String> {
    match frozen {
        Some(p) => vec!["--config".into(), p.display().to_string()],
        None => TINY.iter().flat_map(|s| ["--set".to_string(), s.to_string()]).collect(),
    }
}

/// One invocation per pipeline stage: `(subcommand args, output directory)`.
pub fn pipeline(root: &Path) -> Vec<(Vec<String>, PathBuf)> {
    let p = |s: &str| root.join(s).display().to_string();
    let cmd = |v: &[&str], out: &str| {
        let mut a: Vec<String> = v.iter().map(|s| s.to_string()).collect();
        a.extend(["--out".into(), p(out)]);
        (a, root.join(out))
    };
    vec![
        cmd(&["gen-corpus", "--kind", "stage1", "--n", "8"], "c1"),
        cmd(&["gen-corpus", "--kind", "stage2", "--per-style", "3"], "c2"),
        cmd(&["gen-corpus", "--kind", "validation", "--per-style", "2"], "val"),
        cmd(&["train-stage1", "--corpus", &p("c1")], "s1"),
        cmd(&["train-stage2", "--stage1", &p("s1/stage1.ckpt"), "--corpus", &p("c2")], "s2"),
        cmd(&["train-stage2", "--one-step", "--corpus", &p("c2")], "os"),
        cmd(
            &["ablate", "--one-step", &p("os/one_step.ckpt"), "--stage1", &p("s1/stage1.ckpt"), "--stage2", &p("s2/stage2.ckpt")],
            "abl",
        ),
        cmd(&["gen-dataset", "--model", &p("s2/stage2.ckpt"), "--pool", &p("c2")], "syn"),
        cmd(&["pretrain-detector", "--corpus", &p("c1")], "det"),
        cmd(
            &["finetune-detector", "--detector", &p("det/detector.ckpt"), "--corpus", &p("syn"), "--validation", &p("val")],
            "ft",
        ),
    ]
}

/// Every file under `dir` except run logs, keyed by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run_log.jsonl") {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Run the tiny pipeline into `root`, then rerun every stage from its frozen
/// config into `rerun` and list the stages whose outputs differ.
pub fn rerun_mismatches(root: &Path, rerun: &Path) -> Vec<String> {
    let flags = tiny_flags(None);
    for (args, _) in pipeline(root) {
        let all: Vec<&str> = args.iter().chain(&flags).map(String::as_str).collect();
        ok(&all);
    }
    // Inputs for the second pass come from the first run so each stage is
    // compared in isolation.
    let mut bad = Vec::new();
    for (args, out) in pipeline(root) {
        let name = out.file_name().unwrap().to_str().unwrap().to_string();
        let target = rerun.join(&name);
        let mut a = args.clone();
        let n = a.len();
        a[n - 1] = target.display().to_string();
        a.extend(tiny_flags(Some(&out.join("run_config.toml"))));
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
        let (x, y) = (snapshot(&out), snapshot(&target));
        if x.is_empty() || x != y {
            bad.push(name);
        }
    }
    bad
}
